#ifndef KMPC_CLI_HPP
#define KMPC_CLI_HPP

#include "kmpc/config.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

namespace kmpc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct RunOptions {
  std::string manifest;
  int jobs = 1;
  std::optional<std::string> out_dir;  // overrides the manifest's output_dir
};

std::string sha256_hex(std::string_view bytes);

/// `# manifest_sha256=<hex> toolkit=<version>`, first line of every CSV.
std::string output_header(const std::string& manifest_sha256);

/// Parses TOOLKIT_SEED_OVERRIDE; empty when unset. Throws ConfigError when
/// the value is not a nonnegative integer.
std::optional<std::uint64_t> seed_override_from_env();

// Each command writes its outputs plus run_record.json into the output
// directory and returns an exit code. Exceptions propagate; run_cli maps
// them to exit codes.
int cmd_fit(const RunOptions& opts, std::ostream& log);
int cmd_openloop(const RunOptions& opts, std::ostream& log);
int cmd_mpc(const RunOptions& opts, std::ostream& log);
int cmd_alpha(const RunOptions& opts, std::ostream& log);
/// Never throws on manifest problems: they are listed in
/// validation_report.json. Returns kExitValidation when any are found.
int cmd_validate(const RunOptions& opts, std::ostream& log);

/// `toolkit <fit|openloop|mpc|alpha|validate> --manifest <path> [--jobs N] [--out DIR]`.
/// 0 success, 1 validation failure, 2 runtime or solver failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kmpc

#endif  // KMPC_CLI_HPP
