#include "kmpc/cli.hpp"

#include "kmpc/errbound.hpp"
#include "kmpc/format.hpp"
#include "kmpc/parallel.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

namespace kmpc {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string output_header(const std::string& manifest_sha256) {
  return "# manifest_sha256=" + manifest_sha256 + " toolkit=" KMPC_VERSION "\n";
}

std::optional<std::uint64_t> seed_override_from_env() {
  const char* v = std::getenv("TOOLKIT_SEED_OVERRIDE");
  if (v == nullptr || *v == '\0') return std::nullopt;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 20) {
    throw ConfigError("TOOLKIT_SEED_OVERRIDE: '" + s + "' is not a nonnegative integer");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("TOOLKIT_SEED_OVERRIDE: '" + s + "' is out of range");
  }
}

namespace {

// Seed streams derived from the manifest seed. The fit stream matches the
// one used inside open_loop_error_study so containers and study fits agree.
constexpr std::uint64_t kStreamFit = 2;
constexpr std::uint64_t kStreamSolver = 3;
constexpr std::uint64_t kStreamTestPoints = 4;
constexpr std::uint64_t kStreamLipschitz = 5;
constexpr std::uint64_t kStreamReference = 6;

json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

/// Loaded manifest plus everything the commands share.
struct Session {
  ExperimentManifest m;
  std::string manifest_hash;
  std::uint64_t seed = 0;
  fs::path out_dir;
  std::string command;
  std::chrono::steady_clock::time_point start;
  json outputs = json::object();

  void write(const std::string& name, const std::string& content) {
    fs::create_directories(out_dir);
    const fs::path p = out_dir / name;
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write " + p.string());
    os << content;
    os.close();
    if (!os) throw Error("write failed for " + p.string());
    outputs[name] = sha256_hex(content);
  }

  void write_csv(const std::string& name, const std::string& body) { write(name, output_header(manifest_hash) + body); }

  json json_header() const {
    json j;
    j["manifest_sha256"] = manifest_hash;
    j["toolkit_version"] = KMPC_VERSION;
    j["experiment"] = m.experiment;
    j["command"] = command;
    return j;
  }

  void finish(std::ostream& log) {
    json r = json_header();
    r["seed"] = seed;
    r["seed_override"] = m.seed_override ? json(*m.seed_override) : json(nullptr);
    r["manifest"] = m.source_path;
    r["outputs"] = outputs;
    r["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string text = r.dump(2) + "\n";
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "run_record.json", std::ios::binary);
    os << text;
    for (const auto& [name, sum] : outputs.items()) {
      log << fmt::format("wrote {} (sha256 {})\n", (out_dir / name).string(), sum.get<std::string>());
    }
  }
};

Session open_session(const RunOptions& opts, const std::string& command) {
  Session s;
  s.start = std::chrono::steady_clock::now();
  s.command = command;
  s.m = load_manifest(opts.manifest);
  s.m.seed_override = seed_override_from_env();
  s.seed = s.m.seed_override.value_or(s.m.seed);
  s.manifest_hash = sha256_hex(s.m.raw_text);
  s.out_dir = opts.out_dir ? fs::path(*opts.out_dir) : fs::path(s.m.output_dir);
  if (opts.jobs < 1) throw ConfigError("--jobs must be >= 1");
  return s;
}

template <typename T>
const T& require(const std::optional<T>& v, const std::string& what, const Session& s) {
  if (!v) throw ConfigError(s.m.source_path + ": command '" + s.command + "' needs a '" + what + "' section");
  return *v;
}

/// Everything needed to evaluate the proportional bound for any fitted
/// generator on one dictionary.
struct BoundContext {
  ReferenceCompression ref;
  double ref_norm = 0.0;
  double L_psi = 0.0;
  std::vector<TestPoint> points;
};

BoundContext bound_context(const Session& s, const Dictionary& dict, const ControlAffineSystem& sys) {
  const auto& p = *s.m.proportional;
  BoundContext c;
  ReferenceMode mode = p.reference;
  mode.seed = derive_seed(s.seed, kStreamReference);
  c.ref = reference_compression(dict, sys, s.m.system.state_box, mode);
  c.ref_norm = reference_generator_norm(c.ref, p.u_grid);
  c.L_psi = lipschitz_estimate(dict, s.m.system.state_box, p.n_pairs, derive_seed(s.seed, kStreamLipschitz));
  c.points = sample_test_points(s.m.system.state_box, s.m.system.control_box, p.n_points,
                                derive_seed(s.seed, kStreamTestPoints));
  return c;
}

struct BoundRow {
  double max_ratio = 0.0;
  double mean_ratio = 0.0;
  double c_tilde = 0.0;
};

BoundRow evaluate_bound(const Session& s, const BoundContext& c, const BilinearSurrogate& sur,
                        const SampledDataMap& plant) {
  BoundRow r;
  const double eps0 = operator_error(sur.generator(), c.ref, s.m.dt, s.m.proportional->u_grid).max;
  r.c_tilde = bound_constant(c.ref_norm, s.m.dt, eps0);
  const RatioStats st = proportional_error_study(sur, plant, c.points, c.L_psi, r.c_tilde);
  r.max_ratio = st.max;
  r.mean_ratio = st.mean;
  return r;
}

BilinearSurrogate load_surrogate(const std::string& path, const SystemConfig& sys, double dt) {
  GeneratorEstimate gen = load_generator(path);
  Dictionary dict = Dictionary::from_id(gen.dict_id);
  if (dict.n_x() != sys.n_x() || gen.n_c() != sys.n_c()) {
    throw ConfigError(path + ": generator dimensions do not match the manifest system");
  }
  return BilinearSurrogate(std::move(gen), std::move(dict), dt);
}

std::string section_summary(const GrowthBounds& gb) {
  return fmt::format("growth bounds from {} samples, k_max {}", gb.samples_used, gb.k_max());
}

MpcProblem make_problem(const Session& s, const MpcSection& sec, std::shared_ptr<const PredictionModel> model) {
  MpcProblem prob;
  prob.horizon = sec.horizon;
  prob.cost = StageCost(sec.Q, sec.R);
  prob.control_box = s.m.system.control_box;
  prob.state_box = s.m.system.state_box;
  prob.model = std::move(model);
  prob.solver = sec.solver;
  prob.solver.seed = derive_seed(s.seed, kStreamSolver);
  return prob;
}

std::shared_ptr<const PredictionModel> make_model(const Session& s, const MpcSection& sec,
                                                  const SampledDataMap& plant) {
  if (sec.surrogate()) {
    if (!fs::exists(sec.surrogate_path)) {
      throw ConfigError(s.m.source_path + ": surrogate container '" + sec.surrogate_path +
                        "' not found (run the fit command first)");
    }
    return std::make_shared<SurrogateModel>(load_surrogate(sec.surrogate_path, s.m.system, s.m.dt));
  }
  return std::make_shared<PlantModel>(plant);
}

}  // namespace

int cmd_fit(const RunOptions& opts, std::ostream& log) {
  Session s = open_session(opts, "fit");
  const auto& dcfg = require(s.m.dictionary, "dictionary", s);
  const Index d = require(s.m.sampling_d, "sampling", s);
  const ControlAffineSystem sys = build_system(s.m.system);
  const Dictionary dict = build_dictionary(dcfg, s.m.system);
  for (const auto& w : dict.warnings()) log << "warning: " << w << "\n";

  const SampleSet samples = sample_states(s.m.system.state_box, d, derive_seed(s.seed, kStreamFit));
  const GeneratorEstimate gen = fit(dict, sys, samples);
  for (const auto& w : gen.warnings) log << "warning: " << w << "\n";

  std::ostringstream bin(std::ios::binary);
  write_generator(bin, gen);
  s.write("generator.bin", bin.str());
  log << fmt::format("fit: M={} n_c={} d={} dictionary {}\n", gen.M, gen.n_c(), gen.d, gen.dict_id);
  s.finish(log);
  return kExitOk;
}

int cmd_openloop(const RunOptions& opts, std::ostream& log) {
  Session s = open_session(opts, "openloop");
  const auto& dcfg = require(s.m.dictionary, "dictionary", s);
  if (!s.m.openloop && !s.m.proportional) {
    throw ConfigError(s.m.source_path + ": command 'openloop' needs an 'openloop' or 'proportional' section");
  }
  const ControlAffineSystem sys = build_system(s.m.system);
  const Dictionary dict = build_dictionary(dcfg, s.m.system);

  if (s.m.openloop) {
    OpenLoopStudyConfig cfg;
    cfg.state_box = s.m.system.state_box;
    cfg.control_box = s.m.system.control_box;
    cfg.dt = s.m.dt;
    cfg.integrator = s.m.integrator;
    cfg.d_grid = s.m.openloop->d_grid;
    cfg.n_init = s.m.openloop->n_init;
    cfg.horizon = s.m.openloop->horizon;
    cfg.seed = s.seed;
    cfg.jobs = opts.jobs;
    const ErrorStudyReport rep = open_loop_error_study(sys, dict, cfg);
    std::ostringstream csv;
    write_openloop_csv(csv, rep);
    s.write_csv("openloop_error.csv", csv.str());
    for (std::size_t i = 0; i < rep.d_grid.size(); ++i) {
      log << fmt::format("openloop: d={} time-averaged mean error {}\n", rep.d_grid[i],
                         format_double(rep.time_averaged_mean(i)));
    }
  }

  if (s.m.proportional) {
    const auto& p = *s.m.proportional;
    const SampledDataMap plant(sys, s.m.dt, s.m.integrator);
    const BoundContext ctx = bound_context(s, dict, sys);
    std::vector<BoundRow> rows(p.d_grid.size());
    parallel_for(p.d_grid.size(), opts.jobs, [&](std::size_t i) {
      const SampleSet samples = sample_states(s.m.system.state_box, p.d_grid[i], derive_seed(s.seed, kStreamFit));
      const BilinearSurrogate sur(fit(dict, sys, samples), dict, s.m.dt);
      rows[i] = evaluate_bound(s, ctx, sur, plant);
    });
    std::string csv = "d,max_ratio,mean_ratio,L_psi,c_tilde\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      csv += fmt::format("{},{},{},{},{}\n", p.d_grid[i], format_double(rows[i].max_ratio),
                         format_double(rows[i].mean_ratio), format_double(ctx.L_psi),
                         format_double(rows[i].c_tilde));
      log << fmt::format("proportional: d={} max ratio {}\n", p.d_grid[i], format_double(rows[i].max_ratio));
    }
    log << "proportional: reference " << ctx.ref.provenance() << "; c_tilde is a proxy constant\n";
    s.write_csv("proportional.csv", csv);
  }
  s.finish(log);
  return kExitOk;
}

int cmd_mpc(const RunOptions& opts, std::ostream& log) {
  Session s = open_session(opts, "mpc");
  const auto& sec = require(s.m.mpc, "mpc", s);
  const ControlAffineSystem sys = build_system(s.m.system);
  const SampledDataMap plant(sys, s.m.dt, s.m.integrator);
  auto model = make_model(s, sec, plant);
  MpcProblem prob = make_problem(s, sec, model);

  std::string eps_source = "manifest";
  if (sec.surrogate()) {
    if (sec.epsilon) {
      prob.epsilon = *sec.epsilon;
    } else {
      // eps_hat * L_psi * diam(X) / 2 from the proportional error study.
      const auto& sm = dynamic_cast<const SurrogateModel&>(*model);
      if (!s.m.proportional) {
        throw ConfigError(s.m.source_path + ": mpc.epsilon is 'auto' but there is no 'proportional' section");
      }
      const Dictionary& dict = sm.surrogate().dictionary();
      if (!dict.conforming()) {
        throw ConfigError(s.m.source_path +
                          ": mpc.epsilon 'auto' needs a conforming dictionary; set it explicitly");
      }
      const BoundContext ctx = bound_context(s, dict, sys);
      const BoundRow row = evaluate_bound(s, ctx, sm.surrogate(), plant);
      prob.epsilon = row.max_ratio * ctx.L_psi * s.m.system.state_box.diameter() / 2.0;
      eps_source = "auto";
      log << fmt::format("mpc: auto epsilon {} (max ratio {}, L_psi {})\n", format_double(prob.epsilon),
                         format_double(row.max_ratio), format_double(ctx.L_psi));
    }
  }

  const ClosedLoopResult run = closed_loop_run(plant, prob, sec.x0, sec.steps);
  std::ostringstream csv;
  write_closedloop_csv(csv, run);
  s.write_csv("closedloop.csv", csv.str());

  const StabilityVerdict v = practical_stability_check(run.trajectory, sec.stability.radius,
                                                       sec.stability.settle_fraction);
  int increases = 0;
  double worst_increase = 0.0;
  for (std::size_t n = 1; n < run.values.size(); ++n) {
    const double inc = run.values[n] - run.values[n - 1];
    if (inc > 1e-9) ++increases;
    worst_increase = std::max(worst_increase, inc);
  }
  double min_norm = std::numeric_limits<double>::infinity();
  for (const auto& x : run.trajectory.states) min_norm = std::min(min_norm, x.norm());

  json j = s.json_header();
  j["model"] = model->id();
  j["horizon"] = prob.horizon;
  j["epsilon"] = number(prob.epsilon);
  j["epsilon_source"] = sec.surrogate() ? eps_source : "not applicable";
  j["x0"] = vec_json(sec.x0);
  j["steps_requested"] = sec.steps;
  j["length"] = v.length;
  j["truncated"] = run.trajectory.truncated();
  j["diagnostic"] = run.trajectory.diagnostic;
  j["nonconverged_solves"] = run.nonconverged_solves;
  j["practically_stable"] = v.stable;
  j["radius"] = number(v.radius);
  j["settle_fraction"] = number(v.settle_fraction);
  j["first_entry"] = v.first_entry;
  j["settle_index"] = v.settle_index;
  j["post_entry_max_norm"] = number(v.post_entry_max);
  j["final_norm"] = number(v.final_norm);
  j["min_norm"] = number(min_norm);
  j["value_increases"] = increases;
  j["max_value_increase"] = number(worst_increase);
  s.write("verdict.json", j.dump(2) + "\n");

  log << fmt::format("mpc: {} steps, final |x| = {}, practically stable: {}\n", v.length - 1,
                     format_double(v.final_norm), v.stable ? "yes" : "no");
  s.finish(log);
  if (run.trajectory.truncated()) {
    log << "mpc: closed loop truncated: " << run.trajectory.diagnostic << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_alpha(const RunOptions& opts, std::ostream& log) {
  Session s = open_session(opts, "alpha");
  const auto& a = require(s.m.alpha, "alpha", s);
  std::vector<double> B = a.B;
  if (a.mode == "grid") {
    const auto& sec = require(s.m.mpc, "mpc", s);
    const ControlAffineSystem sys = build_system(s.m.system);
    const SampledDataMap plant(sys, s.m.dt, s.m.integrator);
    MpcProblem prob = make_problem(s, sec, make_model(s, sec, plant));
    if (sec.surrogate()) prob.epsilon = sec.epsilon.value_or(0.0);
    const auto samples = growth_sample_grid(a.grid_box, a.grid_per_axis, a.exclude_radius);
    const GrowthBounds gb = estimate_growth_bounds(prob, samples, a.n_max, opts.jobs);
    for (const auto& w : gb.warnings) log << "warning: " << w << "\n";
    log << "alpha: " << section_summary(gb) << "\n";
    B = gb.B;
  }
  std::string csv = "N,alpha,B_2,B_N\n";
  for (int N = a.n_min; N <= a.n_max; ++N) {
    const double alpha = suboptimality_index(B, N, a.omega);
    csv += fmt::format("{},{},{},{}\n", N, format_double(alpha), format_double(B[1]),
                       format_double(B[static_cast<std::size_t>(N - 1)]));
    log << fmt::format("alpha: N={} alpha={}\n", N, format_double(alpha));
  }
  s.write_csv("alpha.csv", csv);
  s.finish(log);
  return kExitOk;
}

int cmd_validate(const RunOptions& opts, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  json report;
  std::vector<std::string> problems;
  std::string text;
  {
    std::ifstream is(opts.manifest, std::ios::binary);
    if (is) {
      std::ostringstream ss;
      ss << is.rdbuf();
      text = ss.str();
    } else {
      problems.push_back(opts.manifest + ": cannot open manifest");
    }
  }
  const std::string hash = sha256_hex(text);
  report["manifest_sha256"] = hash;
  report["toolkit_version"] = KMPC_VERSION;
  report["command"] = "validate";
  report["manifest"] = opts.manifest;

  std::optional<ExperimentManifest> m;
  if (problems.empty()) {
    const auto schema = schema_problems(text, opts.manifest);
    problems.insert(problems.end(), schema.begin(), schema.end());
    if (schema.empty()) m = parse_manifest(text, opts.manifest);
  }
  try {
    if (seed_override_from_env()) report["seed_override"] = *seed_override_from_env();
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }

  json dict_report = nullptr;
  json equilibrium = json::object();
  if (m) {
    report["experiment"] = m->experiment;
    try {
      const ControlAffineSystem sys = build_system(m->system);
      const VectorXd zx = VectorXd::Zero(sys.n_x());
      const VectorXd zu = VectorXd::Zero(sys.n_c());
      equilibrium["drift_at_origin"] = number(sys.drift(zx).norm());
      const SampledDataMap plant(sys, m->dt, m->integrator);
      const double plant_origin = plant.step(zx, zu).norm();
      equilibrium["sampled_map_at_origin"] = number(plant_origin);
      if (plant_origin > 1e-9) problems.push_back("sampled map does not keep (0, 0) as an equilibrium");
      if (!m->system.state_box.contains_origin_in_interior()) {
        problems.push_back("state box does not contain the origin in its interior");
      }
      if (!m->system.control_box.contains_origin_in_interior()) {
        problems.push_back("control box does not contain the origin in its interior");
      }
      if (m->dictionary) {
        const Dictionary dict = build_dictionary(*m->dictionary, m->system);
        dict_report = json::object();
        dict_report["id"] = dict.id();
        dict_report["size"] = dict.size();
        json obs = json::array();
        json nonconf = json::array();
        for (Index k = 0; k < dict.size(); ++k) {
          const auto flag = to_string(dict.structure_flags()[static_cast<std::size_t>(k)]);
          obs.push_back({{"name", dict.observable_name(k)}, {"flag", flag}});
          if (dict.structure_flags()[static_cast<std::size_t>(k)] == StructureFlag::nonconforming) {
            nonconf.push_back(dict.observable_name(k));
          }
        }
        dict_report["observables"] = obs;
        dict_report["nonconforming"] = nonconf;
        dict_report["conforming"] = dict.conforming();
        dict_report["warnings"] = dict.warnings();
        try {
          const VectorXd psi0 = dict.eval(zx);
          const VectorXd p = psi0.segment(1, sys.n_x());
          dict_report["projection_at_origin"] = number(p.norm());
        } catch (const Error& e) {
          dict_report["projection_at_origin"] = nullptr;
          problems.push_back(std::string("dictionary undefined at the origin: ") + e.what());
        }
      }
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  report["equilibrium"] = equilibrium;
  report["dictionary"] = dict_report;
  report["problems"] = problems;
  report["valid"] = problems.empty();

  fs::path out = opts.out_dir ? fs::path(*opts.out_dir) : (m ? fs::path(m->output_dir) : fs::path("."));
  fs::create_directories(out);
  const std::string body = report.dump(2) + "\n";
  {
    std::ofstream os(out / "validation_report.json", std::ios::binary);
    os << body;
  }
  json rec;
  rec["manifest_sha256"] = hash;
  rec["toolkit_version"] = KMPC_VERSION;
  rec["command"] = "validate";
  rec["outputs"] = {{"validation_report.json", sha256_hex(body)}};
  rec["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  {
    std::ofstream os(out / "run_record.json", std::ios::binary);
    os << rec.dump(2) << "\n";
  }

  for (const auto& p : problems) log << "problem: " << p << "\n";
  if (dict_report.is_object()) {
    for (const auto& n : dict_report["nonconforming"]) log << "nonconforming observable: " << n.get<std::string>() << "\n";
  }
  log << "validate: " << (problems.empty() ? "ok" : fmt::format("{} problem(s)", problems.size())) << "\n";
  return problems.empty() ? kExitOk : kExitValidation;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"EDMD surrogate modelling and MPC toolkit", "toolkit"};
  app.set_version_flag("--version", KMPC_VERSION);
  app.require_subcommand(1);
  RunOptions opts;
  std::string out_dir;

  using Command = int (*)(const RunOptions&, std::ostream&);
  const std::vector<std::pair<std::string, Command>> commands = {
      {"fit", cmd_fit}, {"openloop", cmd_openloop}, {"mpc", cmd_mpc}, {"alpha", cmd_alpha},
      {"validate", cmd_validate}};
  const std::vector<std::string> help = {
      "Fit the EDMD generators and write generator.bin",
      "Open-loop error study (openloop_error.csv) and proportional bound study (proportional.csv)",
      "Run the MPC closed loop (closedloop.csv, verdict.json)",
      "Suboptimality index over a horizon range (alpha.csv)",
      "Check the manifest and dictionary, write validation_report.json"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    CLI::App* sub = app.add_subcommand(commands[i].first, help[i]);
    sub->add_option("--manifest", opts.manifest, "Experiment manifest (YAML)")->required();
    sub->add_option("--jobs", opts.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }
  if (!out_dir.empty()) opts.out_dir = out_dir;

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      return commands[i].second(opts, out);
    } catch (const ContractViolation& e) {
      err << "validation error: " << e.what() << "\n";
      return kExitValidation;
    } catch (const Error& e) {
      err << "runtime error: " << e.what() << "\n";
      return kExitRuntime;
    } catch (const std::exception& e) {
      err << "runtime error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitValidation;
}

}  // namespace kmpc
