#include <doctest.h>

#include "kmpc/cli.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace kmpc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("kmpc_cli_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_manifest(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

int run(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "toolkit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return rc;
}

const std::string kVdp = R"(schema_version: 1
experiment: cli_test
seed: 5
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
  d: 200
openloop:
  d_grid: [50]
  n_init: 5
  horizon: 10
mpc:
  horizon: 5
  Q_diag: [1, 1]
  R_diag: [0.05]
  model: nominal
  steps: 0
  x0: [1, 0]
  stability: {radius: 0.05}
)";

// Body of a CSV: everything after the header comment line.
std::string csv_body(const std::string& text) { return text.substr(text.find('\n') + 1); }

}  // namespace

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("fit writes a container with a consistent generator and a run record") {
  TempDir tmp;
  const fs::path m = write_manifest(tmp.path, "m.yaml", kVdp);
  const fs::path out = tmp.path / "fit";
  REQUIRE(run({"fit", "--manifest", m.string(), "--out", out.string()}) == kExitOk);
  const GeneratorEstimate gen = load_generator((out / "generator.bin").string());
  CHECK(gen.M == 10);
  CHECK(gen.d == 200);
  CHECK(gen.L0.col(0).cwiseAbs().maxCoeff() == 0.0);

  const auto rec = nlohmann::json::parse(slurp(out / "run_record.json"));
  CHECK(rec["manifest_sha256"] == sha256_hex(kVdp));
  CHECK(rec["seed"] == 5);
  CHECK(rec["outputs"]["generator.bin"] == sha256_hex(slurp(out / "generator.bin")));

  // Same manifest, same bytes.
  const fs::path again = tmp.path / "fit2";
  REQUIRE(run({"fit", "--manifest", m.string(), "--out", again.string()}) == kExitOk);
  CHECK(slurp(out / "generator.bin") == slurp(again / "generator.bin"));
}

TEST_CASE("seed override changes the fit") {
  TempDir tmp;
  const fs::path m = write_manifest(tmp.path, "m.yaml", kVdp);
  REQUIRE(run({"fit", "--manifest", m.string(), "--out", (tmp.path / "a").string()}) == kExitOk);
  ::setenv("TOOLKIT_SEED_OVERRIDE", "99", 1);
  REQUIRE(run({"fit", "--manifest", m.string(), "--out", (tmp.path / "b").string()}) == kExitOk);
  ::unsetenv("TOOLKIT_SEED_OVERRIDE");
  CHECK(slurp(tmp.path / "a" / "generator.bin") != slurp(tmp.path / "b" / "generator.bin"));
  const auto rec = nlohmann::json::parse(slurp(tmp.path / "b" / "run_record.json"));
  CHECK(rec["seed_override"] == 99);
}

TEST_CASE("invalid manifests exit with 1") {
  TempDir tmp;
  std::string bad = kVdp;
  bad.replace(bad.find("d: 200"), 6, "d: 0");
  const fs::path m = write_manifest(tmp.path, "bad.yaml", bad);
  std::string log;
  CHECK(run({"fit", "--manifest", m.string(), "--out", (tmp.path / "x").string()}, &log) == kExitValidation);
  CHECK(log.find("bad.yaml") != std::string::npos);
  CHECK(run({"fit", "--manifest", (tmp.path / "missing.yaml").string()}) == kExitValidation);
  CHECK(run({"frobnicate"}) == kExitValidation);
  CHECK(run({"fit"}) == kExitValidation);
  CHECK(run({"--help"}) == kExitOk);
}

TEST_CASE("openloop with one d writes one block with a header") {
  TempDir tmp;
  const fs::path m = write_manifest(tmp.path, "m.yaml", kVdp);
  const fs::path out = tmp.path / "ol";
  REQUIRE(run({"openloop", "--manifest", m.string(), "--out", out.string(), "--jobs", "2"}) == kExitOk);
  const std::string csv = slurp(out / "openloop_error.csv");
  CHECK(csv.rfind("# manifest_sha256=" + sha256_hex(kVdp) + " toolkit=", 0) == 0);
  const std::string body = csv_body(csv);
  CHECK(body.rfind("d,k,mean_err,max_err\n", 0) == 0);
  CHECK(std::count(body.begin(), body.end(), '\n') == 1 + 11);
  CHECK_FALSE(fs::exists(out / "proportional.csv"));
}

TEST_CASE("mpc with zero steps gives a single-state trajectory") {
  TempDir tmp;
  const fs::path m = write_manifest(tmp.path, "m.yaml", kVdp);
  const fs::path out = tmp.path / "mpc";
  REQUIRE(run({"mpc", "--manifest", m.string(), "--out", out.string()}) == kExitOk);
  const auto v = nlohmann::json::parse(slurp(out / "verdict.json"));
  CHECK(v["length"] == 1);
  CHECK(v["truncated"] == false);
  CHECK(v["epsilon_source"] == "not applicable");
  const std::string body = csv_body(slurp(out / "closedloop.csv"));
  CHECK(std::count(body.begin(), body.end(), '\n') == 2);
}

TEST_CASE("surrogate mpc without a container is a validation error") {
  TempDir tmp;
  std::string text = kVdp;
  text.replace(text.find("model: nominal"), 14, "model: surrogate:nowhere.bin\n  epsilon: 0.01");
  const fs::path m = write_manifest(tmp.path, "m.yaml", text);
  CHECK(run({"mpc", "--manifest", m.string(), "--out", (tmp.path / "o").string()}) == kExitValidation);
}

TEST_CASE("alpha on synthetic profiles") {
  TempDir tmp;
  const std::string base = R"(schema_version: 1
experiment: a
seed: 0
system:
  type: van_der_pol
  mu: 0.1
  state_box: {lower: [-2, -2], upper: [2, 2]}
  control_box: {lower: [-5], upper: [5]}
dt: 0.05
alpha:
  mode: synthetic
)";
  const fs::path ones = write_manifest(tmp.path, "ones.yaml", base + "  B: [1, 1, 1, 1]\n  N: [2, 5]\n");
  REQUIRE(run({"alpha", "--manifest", ones.string(), "--out", (tmp.path / "ones").string()}) == kExitOk);
  CHECK(csv_body(slurp(tmp.path / "ones" / "alpha.csv")) == "N,alpha,B_2,B_N\n2,1,1,1\n3,1,1,1\n4,1,1,1\n5,1,1,1\n");

  const fs::path two = write_manifest(tmp.path, "two.yaml", base + "  B: [2, 2]\n  N: [3, 3]\n");
  REQUIRE(run({"alpha", "--manifest", two.string(), "--out", (tmp.path / "two").string()}) == kExitOk);
  const std::string body = csv_body(slurp(tmp.path / "two" / "alpha.csv"));
  const std::string row = body.substr(body.find('\n') + 1);
  CHECK(std::stod(row.substr(2)) == 2.0 / 3.0);

  const fs::path shortb = write_manifest(tmp.path, "short.yaml", base + "  B: [2]\n  N: [2, 4]\n");
  CHECK(run({"alpha", "--manifest", shortb.string(), "--out", (tmp.path / "s").string()}) == kExitValidation);
}

TEST_CASE("validate reports nonconforming observables and schema problems") {
  TempDir tmp;
  const fs::path cstr = fs::path(KMPC_MANIFEST_DIR) / "cstr_fit.yaml";
  std::string log;
  REQUIRE(run({"validate", "--manifest", cstr.string(), "--out", (tmp.path / "v").string()}, &log) == kExitOk);
  const auto rep = nlohmann::json::parse(slurp(tmp.path / "v" / "validation_report.json"));
  CHECK(rep["valid"] == true);
  CHECK(rep["dictionary"]["conforming"] == false);
  CHECK(rep["dictionary"]["nonconforming"].size() == 2);
  CHECK(rep["equilibrium"]["sampled_map_at_origin"].get<double>() <= 1e-9);
  CHECK(log.find("nonconforming observable") != std::string::npos);

  std::string bad = kVdp;
  bad.replace(bad.find("upper: [2, 2]"), 13, "upper: [2, -3]");
  const fs::path m = write_manifest(tmp.path, "bad.yaml", bad);
  CHECK(run({"validate", "--manifest", m.string(), "--out", (tmp.path / "b").string()}) == kExitValidation);
  const auto brep = nlohmann::json::parse(slurp(tmp.path / "b" / "validation_report.json"));
  CHECK(brep["valid"] == false);
  CHECK_FALSE(brep["problems"].empty());
}
