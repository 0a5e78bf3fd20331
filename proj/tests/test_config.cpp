#include <doctest.h>

#include "kmpc/cli.hpp"
#include "kmpc/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kmpc;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kMinimal = R"(schema_version: 1
experiment: t
seed: 3
system:
  type: van_der_pol
  mu: 0.1
  state_box: {lower: [-2, -2], upper: [2, 2]}
  control_box: {lower: [-5], upper: [5]}
dt: 0.05
dictionary:
  type: monomial
  max_degree: 3
sampling:
  d: 100
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

std::string error_of(const std::string& text) {
  try {
    parse_manifest(text, "m.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("every shipped manifest parses") {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(KMPC_MANIFEST_DIR)) {
    if (entry.path().extension() != ".yaml") continue;
    CAPTURE(entry.path().string());
    const ExperimentManifest m = load_manifest(entry.path().string());
    CHECK(m.schema_version == 1);
    CHECK_FALSE(m.experiment.empty());
    CHECK(schema_problems(read_file(entry.path()), entry.path().string()).empty());
    ++count;
  }
  CHECK(count >= 8);
}

TEST_CASE("minimal manifest fields") {
  const ExperimentManifest m = parse_manifest(kMinimal, "m.yaml");
  CHECK(m.seed == 3);
  CHECK(m.dt == 0.05);
  CHECK(m.system.type == "van_der_pol");
  CHECK(m.system.state_box.upper[1] == 2.0);
  CHECK(m.sampling_d.value() == 100);
  CHECK(m.output_dir == "out/t");
  CHECK_FALSE(m.mpc.has_value());
  const Dictionary dict = build_dictionary(*m.dictionary, m.system);
  CHECK(dict.size() == 10);
  const ControlAffineSystem sys = build_system(m.system);
  CHECK(sys.drift(VectorXd::Zero(2)).norm() == 0.0);
}

TEST_CASE("errors carry file and line") {
  const std::string bad = replace(kMinimal, "d: 100", "d: 0");
  const std::string msg = error_of(bad);
  CHECK(msg.find("m.yaml:14:") != std::string::npos);
  CHECK(msg.find("sampling") != std::string::npos);
}

TEST_CASE("malformed boxes are rejected") {
  CHECK_FALSE(error_of(replace(kMinimal, "upper: [2, 2]", "upper: [2, -3]")).empty());
  CHECK_FALSE(error_of(replace(kMinimal, "upper: [2, 2]", "upper: [2]")).empty());
  CHECK_FALSE(error_of(replace(kMinimal, "upper: [5]", "upper: [x]")).empty());
}

TEST_CASE("unknown keys, wrong schema version and bad dt are rejected") {
  CHECK(error_of(replace(kMinimal, "seed: 3", "seed: 3\ncolour: red")).find("unknown key 'colour'") != std::string::npos);
  CHECK_FALSE(error_of(replace(kMinimal, "schema_version: 1", "schema_version: 2")).empty());
  CHECK_FALSE(error_of(replace(kMinimal, "dt: 0.05", "dt: -0.05")).empty());
  CHECK_FALSE(error_of(replace(kMinimal, "max_degree: 3", "max_degree: 0")).empty());
  CHECK_FALSE(error_of("[1, 2").empty());
}

TEST_CASE("CSTR parameters are all mandatory") {
  std::string text = read_file(fs::path(KMPC_MANIFEST_DIR) / "cstr_fit.yaml");
  CHECK(error_of(text).empty());
  const std::string msg = error_of(replace(text, "    k0: 8.46e6\n", ""));
  CHECK(msg.find("k0") != std::string::npos);
}

TEST_CASE("mpc section checks") {
  const std::string mpc = std::string(kMinimal) + R"(mpc:
  horizon: 30
  Q_diag: [1, 1]
  R_diag: [0.05]
  model: nominal
  steps: 10
  x0: [1, 0]
  stability: {radius: 0.05}
)";
  const ExperimentManifest m = parse_manifest(mpc, "m.yaml");
  REQUIRE(m.mpc.has_value());
  CHECK(m.mpc->horizon == 30);
  CHECK_FALSE(m.mpc->surrogate());
  CHECK(m.mpc->Q == MatrixXd::Identity(2, 2));
  CHECK_FALSE(error_of(replace(mpc, "horizon: 30", "horizon: 1")).empty());
  CHECK_FALSE(error_of(replace(mpc, "x0: [1, 0]", "x0: [3, 0]")).empty());
  CHECK_FALSE(error_of(replace(mpc, "R_diag: [0.05]", "R_diag: [0]")).empty());
  CHECK_FALSE(error_of(replace(mpc, "  stability: {radius: 0.05}\n", "")).empty());
  // auto epsilon without a proportional section
  CHECK_FALSE(error_of(replace(mpc, "model: nominal", "model: surrogate:g.bin\n  epsilon: auto")).empty());
  const ExperimentManifest s = parse_manifest(replace(mpc, "model: nominal", "model: surrogate:g.bin\n  epsilon: 0.1"),
                                              "/tmp/dir/m.yaml");
  CHECK(s.mpc->surrogate());
  CHECK(s.mpc->epsilon.value() == 0.1);
  CHECK(fs::path(s.mpc->surrogate_path) == fs::path("/tmp/dir/g.bin"));
}

TEST_CASE("schema_problems collects problems across sections") {
  std::string text = replace(kMinimal, "d: 100", "d: 0");
  text = replace(text, "max_degree: 3", "max_degree: -1");
  CHECK(schema_problems(text, "m.yaml").size() >= 2);
  CHECK(schema_problems(kMinimal, "m.yaml").empty());
}

TEST_CASE("seed override from the environment") {
  ::unsetenv("TOOLKIT_SEED_OVERRIDE");
  CHECK_FALSE(seed_override_from_env().has_value());
  ::setenv("TOOLKIT_SEED_OVERRIDE", "17", 1);
  CHECK(seed_override_from_env().value() == 17);
  ::setenv("TOOLKIT_SEED_OVERRIDE", "-4", 1);
  CHECK_THROWS_AS(seed_override_from_env(), ConfigError);
  ::unsetenv("TOOLKIT_SEED_OVERRIDE");
}
