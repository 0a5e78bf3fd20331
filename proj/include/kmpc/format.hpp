#ifndef KMPC_FORMAT_HPP
#define KMPC_FORMAT_HPP

#include <string>

namespace kmpc {

/// Shortest round-trip decimal representation; stable across runs, used for
/// every number written to CSV/JSON.
std::string format_double(double v);

}  // namespace kmpc

#endif  // KMPC_FORMAT_HPP
