#include "kmpc/format.hpp"

#include <fmt/format.h>

namespace kmpc {

std::string format_double(double v) { return fmt::format("{}", v); }

}  // namespace kmpc
