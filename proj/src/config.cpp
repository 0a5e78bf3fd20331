#include "kmpc/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace kmpc {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    std::string where = source_;
    if (at.IsDefined() && !at.Mark().is_null()) {
      where += ":" + std::to_string(at.Mark().line + 1) + ":" + std::to_string(at.Mark().column + 1);
    }
    throw ConfigError(where + ": " + msg);
  }

  YAML::Node need(const YAML::Node& parent, const std::string& key, const std::string& where) const {
    if (!parent.IsMap()) fail(parent, "'" + where + "' must be a mapping");
    const YAML::Node n = parent[key];
    if (!n.IsDefined() || n.IsNull()) fail(parent, "missing key '" + key + "' in '" + where + "'");
    return n;
  }

  void allow_keys(const YAML::Node& map, std::initializer_list<const char*> keys,
                  const std::string& where) const {
    if (!map.IsMap()) fail(map, "'" + where + "' must be a mapping");
    for (const auto& kv : map) {
      const auto k = kv.first.as<std::string>();
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
        fail(kv.first, "unknown key '" + k + "' in '" + where + "'");
      }
    }
  }

  double number(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, "'" + what + "' must be a number");
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(n, "'" + what + "' must be a number, got '" + n.Scalar() + "'");
    }
  }

  long long integer(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, "'" + what + "' must be an integer");
    try {
      return n.as<long long>();
    } catch (const YAML::Exception&) {
      fail(n, "'" + what + "' must be an integer, got '" + n.Scalar() + "'");
    }
  }

  std::uint64_t unsigned_integer(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar() || n.Scalar().starts_with("-")) fail(n, "'" + what + "' must be a nonnegative integer");
    try {
      return n.as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      fail(n, "'" + what + "' must be a nonnegative integer, got '" + n.Scalar() + "'");
    }
  }

  bool boolean(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      fail(n, "'" + what + "' must be true or false");
    }
  }

  std::string text(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, "'" + what + "' must be a string");
    return n.Scalar();
  }

  VectorXd vector(const YAML::Node& n, const std::string& what) const {
    if (!n.IsSequence()) fail(n, "'" + what + "' must be a list of numbers");
    VectorXd v(static_cast<Index>(n.size()));
    for (std::size_t i = 0; i < n.size(); ++i) v[static_cast<Index>(i)] = number(n[i], what);
    return v;
  }

  MatrixXd matrix(const YAML::Node& n, const std::string& what) const {
    if (!n.IsSequence() || n.size() == 0) fail(n, "'" + what + "' must be a nonempty list of rows");
    const std::size_t rows = n.size();
    if (!n[0].IsSequence()) fail(n, "'" + what + "' must be a list of rows");
    const std::size_t cols = n[0].size();
    MatrixXd M(static_cast<Index>(rows), static_cast<Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      if (!n[r].IsSequence() || n[r].size() != cols) fail(n[r], "'" + what + "' has ragged rows");
      for (std::size_t c = 0; c < cols; ++c) {
        M(static_cast<Index>(r), static_cast<Index>(c)) = number(n[r][c], what);
      }
    }
    return M;
  }

  Box box(const YAML::Node& n, const std::string& what) const {
    allow_keys(n, {"lower", "upper"}, what);
    VectorXd lo = vector(need(n, "lower", what), what + ".lower");
    VectorXd hi = vector(need(n, "upper", what), what + ".upper");
    if (lo.size() != hi.size() || lo.size() == 0) fail(n, "'" + what + "': lower and upper differ in length");
    for (Index i = 0; i < lo.size(); ++i) {
      if (lo[i] > hi[i]) {
        fail(n, "'" + what + "': lower > upper in component " + std::to_string(i + 1) + " (" +
                    std::to_string(lo[i]) + " > " + std::to_string(hi[i]) + ")");
      }
    }
    return Box(lo, hi);
  }

  /// Either a full matrix under `key` or its diagonal under `key_diag`.
  MatrixXd weight(const YAML::Node& sec, const std::string& key, Index n, const std::string& where) const {
    const YAML::Node full = sec[key];
    const YAML::Node diag = sec[key + "_diag"];
    if (full.IsDefined() == diag.IsDefined()) {
      fail(sec, "'" + where + "' needs exactly one of '" + key + "' or '" + key + "_diag'");
    }
    MatrixXd W = full.IsDefined() ? matrix(full, where + "." + key)
                                  : MatrixXd(vector(diag, where + "." + key + "_diag").asDiagonal());
    if (W.rows() != n || W.cols() != n) {
      fail(full.IsDefined() ? full : diag, "'" + where + "." + key + "' must be " + std::to_string(n) + "x" +
                                                std::to_string(n));
    }
    return W;
  }

 private:
  std::string source_;
};

PolynomialField polynomial_field(const Reader& rd, const YAML::Node& n, Index n_x, const std::string& what) {
  if (!n.IsSequence() || static_cast<Index>(n.size()) != n_x) {
    rd.fail(n, "'" + what + "' must list " + std::to_string(n_x) + " components");
  }
  PolynomialField f;
  for (const auto& comp : n) {
    if (!comp.IsSequence()) rd.fail(comp, "'" + what + "': each component is a list of terms");
    std::vector<PolynomialTerm> terms;
    for (const auto& t : comp) {
      rd.allow_keys(t, {"coefficient", "exponents"}, what);
      PolynomialTerm term;
      term.coefficient = rd.number(rd.need(t, "coefficient", what), what + ".coefficient");
      const YAML::Node e = rd.need(t, "exponents", what);
      if (!e.IsSequence() || static_cast<Index>(e.size()) != n_x) {
        rd.fail(e, "'" + what + "': exponents must have n_x entries");
      }
      for (const auto& x : e) term.exponents.push_back(static_cast<int>(rd.integer(x, what + ".exponents")));
      terms.push_back(term);
    }
    f.components.push_back(std::move(terms));
  }
  return f;
}

SystemConfig parse_system(const Reader& rd, const YAML::Node& n) {
  rd.allow_keys(n, {"type", "mu", "A", "B", "drift", "inputs", "params", "state_box", "control_box"}, "system");
  SystemConfig s;
  s.type = rd.text(rd.need(n, "type", "system"), "system.type");
  s.state_box = rd.box(rd.need(n, "state_box", "system"), "system.state_box");
  s.control_box = rd.box(rd.need(n, "control_box", "system"), "system.control_box");
  Index nx = 0, nc = 0;
  if (s.type == "van_der_pol") {
    s.mu = rd.number(rd.need(n, "mu", "system"), "system.mu");
    nx = 2;
    nc = 1;
  } else if (s.type == "linear") {
    s.A = rd.matrix(rd.need(n, "A", "system"), "system.A");
    s.B = rd.matrix(rd.need(n, "B", "system"), "system.B");
    if (s.A.rows() != s.A.cols() || s.B.rows() != s.A.rows()) {
      rd.fail(n, "'system': A must be n x n and B n x m");
    }
    nx = s.A.rows();
    nc = s.B.cols();
  } else if (s.type == "polynomial") {
    nx = s.state_box.dim();
    s.poly_drift = polynomial_field(rd, rd.need(n, "drift", "system"), nx, "system.drift");
    const YAML::Node in = rd.need(n, "inputs", "system");
    if (!in.IsSequence()) rd.fail(in, "'system.inputs' must be a list of fields");
    for (const auto& f : in) s.poly_inputs.push_back(polynomial_field(rd, f, nx, "system.inputs"));
    nc = static_cast<Index>(s.poly_inputs.size());
  } else if (s.type == "cstr") {
    // Physical constants are mandatory: no defaults.
    const YAML::Node p = rd.need(n, "params", "system");
    rd.allow_keys(p, {"F", "V_r", "C_A0", "k0", "E", "R_gas", "T_A0", "delta_H", "rho", "C_p", "C_As", "T_rs"},
                  "system.params");
    auto get = [&](const char* k) { return rd.number(rd.need(p, k, "system.params"), std::string("system.params.") + k); };
    s.cstr = CstrParameters{get("F"),       get("V_r"), get("C_A0"), get("k0"),   get("E"),    get("R_gas"),
                            get("T_A0"),    get("delta_H"), get("rho"), get("C_p"), get("C_As"), get("T_rs")};
    nx = 2;
    nc = 1;
  } else {
    rd.fail(n["type"], "unknown system type '" + s.type + "' (van_der_pol, linear, polynomial, cstr)");
  }
  if (s.state_box.dim() != nx) {
    rd.fail(n["state_box"], "'system.state_box' must have " + std::to_string(nx) + " components");
  }
  if (s.control_box.dim() != nc) {
    rd.fail(n["control_box"], "'system.control_box' must have " + std::to_string(nc) + " components");
  }
  return s;
}

DictionaryConfig parse_dictionary(const Reader& rd, const YAML::Node& n, Index nx) {
  rd.allow_keys(n, {"type", "max_degree", "observables", "acknowledge_singularity"}, "dictionary");
  DictionaryConfig d;
  d.type = rd.text(rd.need(n, "type", "dictionary"), "dictionary.type");
  if (n["acknowledge_singularity"]) {
    d.acknowledge_singularity = rd.boolean(n["acknowledge_singularity"], "dictionary.acknowledge_singularity");
  }
  if (d.type == "monomial") {
    d.max_degree = static_cast<int>(rd.integer(rd.need(n, "max_degree", "dictionary"), "dictionary.max_degree"));
    if (d.max_degree < 1) rd.fail(n["max_degree"], "'dictionary.max_degree' must be >= 1");
  } else if (d.type == "custom") {
    const YAML::Node obs = rd.need(n, "observables", "dictionary");
    if (!obs.IsSequence()) rd.fail(obs, "'dictionary.observables' must be a list");
    for (const auto& o : obs) {
      rd.allow_keys(o, {"kind", "exponents", "coordinate", "offset"}, "dictionary.observables");
      const std::string kind = rd.text(rd.need(o, "kind", "dictionary.observables"), "kind");
      if (kind == "monomial") {
        const YAML::Node e = rd.need(o, "exponents", "dictionary.observables");
        if (!e.IsSequence() || static_cast<Index>(e.size()) != nx) {
          rd.fail(e, "monomial exponents must have " + std::to_string(nx) + " entries");
        }
        MonomialObservable m;
        for (const auto& x : e) {
          const long long v = rd.integer(x, "exponents");
          if (v < 0) rd.fail(x, "exponents must be nonnegative");
          m.exponents.push_back(static_cast<int>(v));
        }
        d.observables.emplace_back(std::move(m));
      } else if (kind == "reciprocal_exp") {
        const long long c = rd.integer(rd.need(o, "coordinate", "dictionary.observables"), "coordinate");
        if (c < 1 || c > nx) rd.fail(o["coordinate"], "coordinate must be in 1.." + std::to_string(nx));
        const double off = o["offset"] ? rd.number(o["offset"], "offset") : 0.0;
        d.observables.emplace_back(ReciprocalExponential{static_cast<Index>(c - 1), off});
      } else {
        rd.fail(o["kind"], "unknown observable kind '" + kind + "' (monomial, reciprocal_exp)");
      }
    }
  } else {
    rd.fail(n["type"], "unknown dictionary type '" + d.type + "' (monomial, custom)");
  }
  return d;
}

std::vector<Index> count_list(const Reader& rd, const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence() || n.size() == 0) rd.fail(n, "'" + what + "' must be a nonempty list");
  std::vector<Index> out;
  for (const auto& x : n) {
    const long long v = rd.integer(x, what);
    if (v < 1) rd.fail(x, "'" + what + "' entries must be >= 1");
    out.push_back(static_cast<Index>(v));
  }
  return out;
}

SolverConfig parse_solver(const Reader& rd, const YAML::Node& n) {
  rd.allow_keys(n, {"max_iterations", "gradient_tolerance", "function_tolerance", "fd_step", "penalty_schedule",
                    "restarts", "constraint_tolerance"},
                "mpc.solver");
  SolverConfig s;
  if (n["max_iterations"]) s.max_iterations = static_cast<int>(rd.integer(n["max_iterations"], "max_iterations"));
  if (n["gradient_tolerance"]) s.gradient_tolerance = rd.number(n["gradient_tolerance"], "gradient_tolerance");
  if (n["function_tolerance"]) s.function_tolerance = rd.number(n["function_tolerance"], "function_tolerance");
  if (n["fd_step"]) s.fd_step = rd.number(n["fd_step"], "fd_step");
  if (n["restarts"]) s.restarts = static_cast<int>(rd.integer(n["restarts"], "restarts"));
  if (n["constraint_tolerance"]) s.constraint_tolerance = rd.number(n["constraint_tolerance"], "constraint_tolerance");
  if (n["penalty_schedule"]) {
    const VectorXd v = rd.vector(n["penalty_schedule"], "penalty_schedule");
    s.penalty_schedule.assign(v.data(), v.data() + v.size());
  }
  try {
    s.validate();
  } catch (const ContractViolation& e) {
    rd.fail(n, e.what());
  }
  return s;
}

MpcSection parse_mpc(const Reader& rd, const YAML::Node& n, const SystemConfig& sys,
                     const std::filesystem::path& base) {
  rd.allow_keys(n, {"horizon", "Q", "Q_diag", "R", "R_diag", "epsilon", "model", "steps", "x0", "solver",
                    "stability", "auto_epsilon"},
                "mpc");
  MpcSection m;
  m.horizon = static_cast<int>(rd.integer(rd.need(n, "horizon", "mpc"), "mpc.horizon"));
  if (m.horizon < 2) rd.fail(n["horizon"], "'mpc.horizon' must be >= 2");
  m.Q = rd.weight(n, "Q", sys.n_x(), "mpc");
  m.R = rd.weight(n, "R", sys.n_c(), "mpc");
  try {
    StageCost check(m.Q, m.R);
  } catch (const ContractViolation& e) {
    rd.fail(n, e.what());
  }
  if (n["epsilon"]) {
    const YAML::Node e = n["epsilon"];
    if (!(e.IsScalar() && e.Scalar() == "auto")) {
      m.epsilon = rd.number(e, "mpc.epsilon");
      if (*m.epsilon < 0.0) rd.fail(e, "'mpc.epsilon' must be >= 0");
    }
  }
  m.model = rd.text(rd.need(n, "model", "mpc"), "mpc.model");
  if (m.model.starts_with("surrogate:")) {
    std::filesystem::path p = m.model.substr(10);
    if (p.empty()) rd.fail(n["model"], "'mpc.model' surrogate path is empty");
    if (p.is_relative()) p = base / p;
    m.surrogate_path = p.lexically_normal().string();
  } else if (m.model != "nominal") {
    rd.fail(n["model"], "'mpc.model' must be 'nominal' or 'surrogate:<path>'");
  }
  m.steps = static_cast<int>(rd.integer(rd.need(n, "steps", "mpc"), "mpc.steps"));
  if (m.steps < 0) rd.fail(n["steps"], "'mpc.steps' must be >= 0");
  m.x0 = rd.vector(rd.need(n, "x0", "mpc"), "mpc.x0");
  if (m.x0.size() != sys.n_x()) rd.fail(n["x0"], "'mpc.x0' must have " + std::to_string(sys.n_x()) + " entries");
  if (!sys.state_box.contains(m.x0)) rd.fail(n["x0"], "'mpc.x0' lies outside the state box");
  if (n["solver"]) m.solver = parse_solver(rd, n["solver"]);
  if (n["stability"]) {
    const YAML::Node s = n["stability"];
    rd.allow_keys(s, {"radius", "settle_fraction"}, "mpc.stability");
    m.stability.radius = rd.number(rd.need(s, "radius", "mpc.stability"), "radius");
    if (s["settle_fraction"]) m.stability.settle_fraction = rd.number(s["settle_fraction"], "settle_fraction");
    if (!(m.stability.radius > 0.0)) rd.fail(s, "'mpc.stability.radius' must be positive");
    if (!(m.stability.settle_fraction > 0.0 && m.stability.settle_fraction <= 1.0)) {
      rd.fail(s, "'mpc.stability.settle_fraction' must be in (0, 1]");
    }
  } else {
    rd.fail(n, "missing key 'stability' in 'mpc'");
  }
  if (n["auto_epsilon"]) {
    const YAML::Node a = n["auto_epsilon"];
    rd.allow_keys(a, {"n_points", "n_pairs"}, "mpc.auto_epsilon");
    if (a["n_points"]) m.auto_eps_points = static_cast<Index>(rd.integer(a["n_points"], "n_points"));
    if (a["n_pairs"]) m.auto_eps_pairs = static_cast<Index>(rd.integer(a["n_pairs"], "n_pairs"));
    if (m.auto_eps_points < 1 || m.auto_eps_pairs < 1) rd.fail(a, "'mpc.auto_epsilon' counts must be >= 1");
  }
  return m;
}

AlphaSection parse_alpha(const Reader& rd, const YAML::Node& n, const SystemConfig& sys) {
  rd.allow_keys(n, {"mode", "B", "geometric_ratio", "N", "omega", "grid"}, "alpha");
  AlphaSection a;
  a.mode = rd.text(rd.need(n, "mode", "alpha"), "alpha.mode");
  const VectorXd range = rd.vector(rd.need(n, "N", "alpha"), "alpha.N");
  if (range.size() != 2 || range[0] < 2 || range[1] < range[0] || range[0] != std::floor(range[0]) ||
      range[1] != std::floor(range[1])) {
    rd.fail(n["N"], "'alpha.N' must be [N_min, N_max] with 2 <= N_min <= N_max");
  }
  a.n_min = static_cast<int>(range[0]);
  a.n_max = static_cast<int>(range[1]);
  if (n["omega"]) a.omega = rd.number(n["omega"], "alpha.omega");
  if (a.mode == "synthetic") {
    a.B.push_back(1.0);
    if (n["B"] && n["geometric_ratio"]) rd.fail(n, "'alpha' takes either 'B' or 'geometric_ratio'");
    if (n["B"]) {
      const VectorXd b = rd.vector(n["B"], "alpha.B");
      a.B.insert(a.B.end(), b.data(), b.data() + b.size());
    } else if (n["geometric_ratio"]) {
      // B_k = sum_{i<k} q^i
      const double q = rd.number(n["geometric_ratio"], "alpha.geometric_ratio");
      for (int k = 2; k <= a.n_max; ++k) a.B.push_back(a.B.back() + std::pow(q, k - 1));
    } else {
      rd.fail(n, "synthetic 'alpha' needs 'B' (B_2, B_3, ...) or 'geometric_ratio'");
    }
    if (static_cast<int>(a.B.size()) < a.n_max) {
      rd.fail(n, "'alpha.B' must cover B_2..B_" + std::to_string(a.n_max));
    }
  } else if (a.mode == "grid") {
    const YAML::Node g = rd.need(n, "grid", "alpha");
    rd.allow_keys(g, {"per_axis", "lower", "upper", "exclude_radius"}, "alpha.grid");
    a.grid_per_axis = static_cast<Index>(rd.integer(rd.need(g, "per_axis", "alpha.grid"), "per_axis"));
    if (a.grid_per_axis < 1) rd.fail(g, "'alpha.grid.per_axis' must be >= 1");
    const VectorXd lo = rd.vector(rd.need(g, "lower", "alpha.grid"), "alpha.grid.lower");
    const VectorXd hi = rd.vector(rd.need(g, "upper", "alpha.grid"), "alpha.grid.upper");
    if (lo.size() != sys.n_x() || hi.size() != sys.n_x() || (lo.array() > hi.array()).any()) {
      rd.fail(g, "'alpha.grid' bounds must be n_x long with lower <= upper");
    }
    a.grid_box = Box(lo, hi);
    if (g["exclude_radius"]) a.exclude_radius = rd.number(g["exclude_radius"], "exclude_radius");
  } else {
    rd.fail(n["mode"], "'alpha.mode' must be 'synthetic' or 'grid'");
  }
  return a;
}

ProportionalSection parse_proportional(const Reader& rd, const YAML::Node& n, const SystemConfig& sys) {
  rd.allow_keys(n, {"d_grid", "n_points", "n_pairs", "reference", "u_grid"}, "proportional");
  ProportionalSection p;
  p.d_grid = count_list(rd, rd.need(n, "d_grid", "proportional"), "proportional.d_grid");
  p.n_points = static_cast<Index>(rd.integer(rd.need(n, "n_points", "proportional"), "n_points"));
  p.n_pairs = static_cast<Index>(rd.integer(rd.need(n, "n_pairs", "proportional"), "n_pairs"));
  if (p.n_points < 1 || p.n_pairs < 1) rd.fail(n, "'proportional' counts must be >= 1");
  const YAML::Node r = rd.need(n, "reference", "proportional");
  rd.allow_keys(r, {"mode", "d_ref"}, "proportional.reference");
  const std::string mode = rd.text(rd.need(r, "mode", "proportional.reference"), "mode");
  if (mode == "analytic") {
    p.reference = ReferenceMode::analytic();
  } else if (mode == "high_d") {
    const long long dref = rd.integer(rd.need(r, "d_ref", "proportional.reference"), "d_ref");
    if (dref < 1) rd.fail(r, "'d_ref' must be >= 1");
    p.reference = ReferenceMode::high_d(static_cast<Index>(dref), 0);
  } else {
    rd.fail(r["mode"], "'proportional.reference.mode' must be 'analytic' or 'high_d'");
  }
  const YAML::Node u = rd.need(n, "u_grid", "proportional");
  if (!u.IsSequence() || u.size() == 0) rd.fail(u, "'proportional.u_grid' must be a nonempty list");
  for (const auto& e : u) {
    VectorXd v = e.IsSequence() ? rd.vector(e, "u_grid") : VectorXd::Constant(1, rd.number(e, "u_grid"));
    if (v.size() != sys.n_c()) rd.fail(e, "'u_grid' entries must have n_c components");
    p.u_grid.push_back(std::move(v));
  }
  return p;
}

// Parses the whole manifest. With `problems` set, section errors are
// collected instead of thrown.
ExperimentManifest parse_impl(const std::string& text, const std::string& source,
                              std::vector<std::string>* problems) {
  const Reader rd(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                      ": YAML syntax error: " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError(source + ": manifest must be a mapping");

  auto section = [&](auto&& fn) -> bool {
    if (!problems) {
      fn();
      return true;
    }
    try {
      fn();
      return true;
    } catch (const ConfigError& e) {
      problems->push_back(e.what());
      return false;
    }
  };

  ExperimentManifest m;
  m.source_path = source;
  m.raw_text = text;
  const std::filesystem::path base = std::filesystem::path(source).parent_path();

  section([&] {
    rd.allow_keys(root, {"schema_version", "experiment", "seed", "system", "dt", "integrator", "dictionary",
                         "sampling", "openloop", "proportional", "mpc", "alpha", "output_dir"},
                  "manifest");
  });
  section([&] {
    m.schema_version = static_cast<int>(rd.integer(rd.need(root, "schema_version", "manifest"), "schema_version"));
    if (m.schema_version != kSchemaVersion) {
      rd.fail(root["schema_version"], "unsupported schema_version " + std::to_string(m.schema_version) +
                                          " (this toolkit reads " + std::to_string(kSchemaVersion) + ")");
    }
  });
  section([&] { m.experiment = rd.text(rd.need(root, "experiment", "manifest"), "experiment"); });
  section([&] { m.seed = rd.unsigned_integer(rd.need(root, "seed", "manifest"), "seed"); });
  section([&] {
    m.dt = rd.number(rd.need(root, "dt", "manifest"), "dt");
    if (!(m.dt > 0.0)) rd.fail(root["dt"], "'dt' must be positive");
  });
  section([&] {
    if (!root["integrator"]) return;
    const YAML::Node n = root["integrator"];
    rd.allow_keys(n, {"rel_tol", "abs_tol", "max_step", "initial_step"}, "integrator");
    if (n["rel_tol"]) m.integrator.rel_tol = rd.number(n["rel_tol"], "rel_tol");
    if (n["abs_tol"]) m.integrator.abs_tol = rd.number(n["abs_tol"], "abs_tol");
    if (n["max_step"]) m.integrator.max_step = rd.number(n["max_step"], "max_step");
    if (n["initial_step"]) m.integrator.initial_step = rd.number(n["initial_step"], "initial_step");
    try {
      m.integrator.validate();
    } catch (const ContractViolation& e) {
      rd.fail(n, e.what());
    }
  });
  section([&] {
    m.output_dir = root["output_dir"] ? rd.text(root["output_dir"], "output_dir") : "out/" + m.experiment;
  });

  const bool have_system = section([&] { m.system = parse_system(rd, rd.need(root, "system", "manifest")); });
  if (!have_system) return m;

  section([&] {
    if (root["dictionary"]) m.dictionary = parse_dictionary(rd, root["dictionary"], m.system.n_x());
  });
  section([&] {
    if (!root["sampling"]) return;
    const YAML::Node n = root["sampling"];
    rd.allow_keys(n, {"d"}, "sampling");
    const long long d = rd.integer(rd.need(n, "d", "sampling"), "sampling.d");
    if (d < 1) rd.fail(n["d"], "'sampling.d' must be >= 1 (got " + std::to_string(d) + ")");
    m.sampling_d = static_cast<Index>(d);
  });
  section([&] {
    if (!root["openloop"]) return;
    const YAML::Node n = root["openloop"];
    rd.allow_keys(n, {"d_grid", "n_init", "horizon"}, "openloop");
    OpenLoopSection o;
    o.d_grid = count_list(rd, rd.need(n, "d_grid", "openloop"), "openloop.d_grid");
    o.n_init = static_cast<Index>(rd.integer(rd.need(n, "n_init", "openloop"), "openloop.n_init"));
    o.horizon = static_cast<Index>(rd.integer(rd.need(n, "horizon", "openloop"), "openloop.horizon"));
    if (o.n_init < 1 || o.horizon < 0) rd.fail(n, "'openloop' needs n_init >= 1 and horizon >= 0");
    m.openloop = o;
  });
  section([&] {
    if (root["proportional"]) m.proportional = parse_proportional(rd, root["proportional"], m.system);
  });
  section([&] {
    if (root["mpc"]) m.mpc = parse_mpc(rd, root["mpc"], m.system, base);
  });
  section([&] {
    if (root["alpha"]) m.alpha = parse_alpha(rd, root["alpha"], m.system);
  });
  section([&] {
    if ((m.openloop || m.proportional || m.sampling_d) && !m.dictionary) {
      rd.fail(root, "'sampling', 'openloop' and 'proportional' need a 'dictionary' section");
    }
    if (m.mpc && m.mpc->surrogate() && !m.mpc->epsilon && !m.proportional) {
      rd.fail(root["mpc"], "mpc.epsilon is 'auto' (or absent) but there is no 'proportional' section to derive it");
    }
    if (m.alpha && m.alpha->mode == "grid" && !m.mpc) {
      rd.fail(root["alpha"], "'alpha' grid mode needs an 'mpc' section (cost, boxes, model)");
    }
  });
  return m;
}

}  // namespace

ExperimentManifest parse_manifest(const std::string& text, const std::string& source_name) {
  return parse_impl(text, source_name, nullptr);
}

ExperimentManifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(path + ": cannot open manifest");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), path);
}

std::vector<std::string> schema_problems(const std::string& text, const std::string& source_name) {
  std::vector<std::string> problems;
  try {
    parse_impl(text, source_name, &problems);
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  return problems;
}

ControlAffineSystem build_system(const SystemConfig& cfg) {
  if (cfg.type == "van_der_pol") return van_der_pol(cfg.mu);
  if (cfg.type == "linear") return linear_system(cfg.A, cfg.B);
  if (cfg.type == "polynomial") return polynomial_system("polynomial", cfg.n_x(), cfg.poly_drift, cfg.poly_inputs);
  if (cfg.type == "cstr") return cstr_system(cfg.cstr);
  throw ConfigError("unknown system type '" + cfg.type + "'");
}

Dictionary build_dictionary(const DictionaryConfig& cfg, const SystemConfig& sys) {
  if (cfg.type == "monomial") return build_monomial_dictionary(sys.n_x(), cfg.max_degree);
  return build_custom_dictionary(sys.n_x(), cfg.observables, &sys.state_box, cfg.acknowledge_singularity);
}

}  // namespace kmpc
