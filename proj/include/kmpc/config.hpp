#ifndef KMPC_CONFIG_HPP
#define KMPC_CONFIG_HPP

#include "kmpc/dictionary.hpp"
#include "kmpc/dynamics.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/errbound.hpp"
#include "kmpc/mpc.hpp"
#include "kmpc/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace kmpc {

inline constexpr int kSchemaVersion = 1;

/// A manifest problem; the message carries file:line:column when known.
class ConfigError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

struct SystemConfig {
  std::string type;  // van_der_pol | linear | polynomial | cstr
  double mu = 0.0;
  MatrixXd A, B;
  PolynomialField poly_drift;
  std::vector<PolynomialField> poly_inputs;
  CstrParameters cstr;
  Box state_box;
  Box control_box;

  Index n_x() const { return state_box.dim(); }
  Index n_c() const { return control_box.dim(); }
};

struct DictionaryConfig {
  std::string type;  // monomial | custom
  int max_degree = 0;
  std::vector<ObservableSpec> observables;
  bool acknowledge_singularity = false;
};

struct OpenLoopSection {
  std::vector<Index> d_grid;
  Index n_init = 0;
  Index horizon = 0;
};

struct ProportionalSection {
  std::vector<Index> d_grid;
  Index n_points = 0;
  Index n_pairs = 0;
  ReferenceMode reference;
  std::vector<VectorXd> u_grid;
};

struct StabilitySection {
  double radius = 0.0;
  double settle_fraction = 1.0;
};

struct MpcSection {
  int horizon = 0;
  MatrixXd Q, R;
  std::optional<double> epsilon;  // empty: derive from the error study
  std::string model;              // "nominal" or "surrogate:<path>"
  std::string surrogate_path;     // resolved against the manifest directory
  int steps = 0;
  VectorXd x0;
  SolverConfig solver;
  StabilitySection stability;
  Index auto_eps_points = 500;
  Index auto_eps_pairs = 2000;

  bool surrogate() const { return !surrogate_path.empty(); }
};

struct AlphaSection {
  std::string mode;               // synthetic | grid
  std::vector<double> B;          // synthetic: B_1 = 1 followed by the listed B_2, B_3, ...
  int n_min = 2;
  int n_max = 2;
  double omega = 1.0;
  Box grid_box;
  Index grid_per_axis = 0;
  double exclude_radius = 1e-6;
};

struct ExperimentManifest {
  int schema_version = 0;
  std::string experiment;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
  SystemConfig system;
  double dt = 0.0;
  IntegratorConfig integrator;
  std::optional<DictionaryConfig> dictionary;
  std::optional<Index> sampling_d;
  std::optional<OpenLoopSection> openloop;
  std::optional<ProportionalSection> proportional;
  std::optional<MpcSection> mpc;
  std::optional<AlphaSection> alpha;
  std::string output_dir;

  std::string source_path;
  std::string raw_text;
};

/// Parses and schema-checks a manifest. Throws ConfigError with file and
/// line context on the first problem.
ExperimentManifest load_manifest(const std::string& path);
ExperimentManifest parse_manifest(const std::string& text, const std::string& source_name);

/// Like parse_manifest but keeps going across sections, returning every
/// schema problem found (empty when the manifest is valid).
std::vector<std::string> schema_problems(const std::string& text, const std::string& source_name);

ControlAffineSystem build_system(const SystemConfig& cfg);
Dictionary build_dictionary(const DictionaryConfig& cfg, const SystemConfig& sys);

}  // namespace kmpc

#endif  // KMPC_CONFIG_HPP
