#include "kmpc/mpc.hpp"

#include "kmpc/format.hpp"
#include "kmpc/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>

namespace kmpc {

LinearDiscreteModel::LinearDiscreteModel(MatrixXd A, MatrixXd B) : A_(std::move(A)), B_(std::move(B)) {
  if (A_.rows() != A_.cols() || B_.rows() != A_.rows()) {
    throw ContractViolation("LinearDiscreteModel: A must be n x n and B n x m");
  }
}

namespace {

void check_spd(const MatrixXd& M, const char* name, double& lmin, double& lmax) {
  if (M.rows() == 0 || M.rows() != M.cols()) {
    throw ContractViolation(std::string("StageCost: ") + name + " must be square and nonempty");
  }
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw ContractViolation(std::string("StageCost: ") + name + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M, Eigen::EigenvaluesOnly);
  lmin = es.eigenvalues().minCoeff();
  lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 0.0)) {
    throw ContractViolation(std::string("StageCost: ") + name + " is not positive definite");
  }
}

}  // namespace

StageCost::StageCost(MatrixXd Q, MatrixXd R) : Q_(std::move(Q)), R_(std::move(R)) {
  double rmin = 0.0, rmax = 0.0;
  check_spd(Q_, "Q", lambda_min_, lambda_max_);
  check_spd(R_, "R", rmin, rmax);
  // Extreme eigenvalues of blkdiag(Q, R).
  lambda_min_ = std::min(lambda_min_, rmin);
  lambda_max_ = std::max(lambda_max_, rmax);
}

double StageCost::operator()(const ConstVecRef& x, const ConstVecRef& u) const {
  return x.dot(Q_ * x) + u.dot(R_ * u);
}

double stage_cost(const StageCost& cost, const ConstVecRef& x, const ConstVecRef& u) {
  if (x.size() != cost.Q().rows() || u.size() != cost.R().rows()) {
    throw ContractViolation("stage_cost: dimension mismatch");
  }
  return cost(x, u);
}

void SolverConfig::validate() const {
  if (max_iterations < 1) throw ContractViolation("solver: max_iterations must be >= 1");
  if (!(gradient_tolerance > 0.0) || !(function_tolerance > 0.0) || !(fd_step > 0.0) ||
      !(constraint_tolerance > 0.0)) {
    throw ContractViolation("solver: tolerances and fd_step must be positive");
  }
  if (penalty_schedule.empty()) throw ContractViolation("solver: empty penalty schedule");
  for (std::size_t i = 0; i < penalty_schedule.size(); ++i) {
    if (!(penalty_schedule[i] > 0.0) || (i > 0 && penalty_schedule[i] <= penalty_schedule[i - 1])) {
      throw ContractViolation("solver: penalty schedule must be positive and increasing");
    }
  }
  if (restarts < 0 || restarts > 2) throw ContractViolation("solver: restarts must be 0, 1 or 2");
}

Box MpcProblem::applicable_state_box() const {
  if (model && model->is_surrogate() && epsilon > 0.0) return state_box.shrink(epsilon);
  return state_box;
}

void MpcProblem::validate() const {
  if (horizon < 2) throw ContractViolation("MpcProblem: horizon must be >= 2");
  if (!model) throw ContractViolation("MpcProblem: no prediction model");
  const Index nx = model->n_x(), nc = model->n_c();
  if (cost.Q().rows() != nx || cost.R().rows() != nc) {
    throw ContractViolation("MpcProblem: cost weights do not match the model dimensions");
  }
  if (state_box.dim() != nx || control_box.dim() != nc) {
    throw ContractViolation("MpcProblem: box dimensions do not match the model");
  }
  if (!(epsilon >= 0.0)) throw ContractViolation("MpcProblem: epsilon must be >= 0");
  if (applicable_state_box().empty()) {
    throw ContractViolation("MpcProblem: tightened state box is empty (epsilon = " +
                            format_double(epsilon) + ")");
  }
  if (!state_box.contains_origin_in_interior() || !control_box.contains_origin_in_interior()) {
    throw ContractViolation("MpcProblem: (0, 0) must lie in the interior of X x U");
  }
  solver.validate();
}

RolloutResult rollout_cost(const PredictionModel& model, const StageCost& cost, const ConstVecRef& x0,
                           const std::vector<VectorXd>& controls) {
  RolloutResult r;
  r.states.push_back(x0);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const VectorXd& x = r.states.back();
    r.cost += stage_cost(cost, x, controls[k]);
    try {
      VectorXd next = model.step(x, controls[k]);
      if (!next.allFinite()) throw DomainError("non-finite prediction");
      r.states.push_back(std::move(next));
    } catch (const Error& e) {
      r.ok = false;
      r.diagnostic = "model failed at step " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  return r;
}

namespace {

// Penalized single-shooting objective with cached rollouts so that a forward
// difference in u(k) only re-simulates steps k..N-1.
class Shooting {
 public:
  Shooting(const MpcProblem& prob, int N, const VectorXd& x0, Box box)
      : prob_(prob), N_(N), nc_(prob.model->n_c()), x0_(x0), box_(std::move(box)) {
    if (const auto* m = dynamic_cast<const SurrogateModel*>(prob.model.get())) {
      sur_ = &m->surrogate();
      transitions_.resize(static_cast<std::size_t>(N_));
    }
    states_.resize(static_cast<std::size_t>(N_) + 1);
    terms_.resize(static_cast<std::size_t>(N_));
    tail_.resize(static_cast<std::size_t>(N_) + 1);
  }

  double rho = 0.0;

  double value(const VectorXd& z) {
    cached_ = false;
    states_[0] = x0_;
    for (int k = 0; k < N_; ++k) {
      const auto u = z.segment(k * nc_, nc_);
      const VectorXd& x = states_[static_cast<std::size_t>(k)];
      double term = prob_.cost(x, u);
      try {
        if (sur_) {
          auto& P = transitions_[static_cast<std::size_t>(k)];
          P = sur_->projected_transition(u);
          states_[static_cast<std::size_t>(k) + 1] = sur_->step_with(P, x);
        } else {
          states_[static_cast<std::size_t>(k) + 1] = prob_.model->step(x, u);
        }
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
      const VectorXd& xn = states_[static_cast<std::size_t>(k) + 1];
      if (!xn.allFinite()) return std::numeric_limits<double>::infinity();
      term += rho * box_.squared_distance(xn);
      terms_[static_cast<std::size_t>(k)] = term;
    }
    tail_[static_cast<std::size_t>(N_)] = 0.0;
    for (int k = N_ - 1; k >= 0; --k) {
      tail_[static_cast<std::size_t>(k)] = tail_[static_cast<std::size_t>(k) + 1] + terms_[static_cast<std::size_t>(k)];
    }
    cached_z_ = z;
    cached_ = true;
    return tail_[0];
  }

  void gradient(const VectorXd& z, double fz, VectorXd& g) {
    if (!cached_ || cached_z_ != z) fz = value(z);
    g.resize(z.size());
    if (!std::isfinite(fz)) {
      g.setZero();
      return;
    }
    const double scale = std::max({z.lpNorm<Eigen::Infinity>(), x0_.lpNorm<Eigen::Infinity>(), 1e-150});
    const VectorXd& lo = prob_.control_box.lower;
    const VectorXd& hi = prob_.control_box.upper;
    VectorXd zp = z;
    for (Index j = 0; j < z.size(); ++j) {
      const int k = static_cast<int>(j / nc_);
      const Index i = j % nc_;
      const double h = prob_.solver.fd_step * std::max(std::abs(z[j]), scale);
      g[j] = 0.0;
      for (double dir : {1.0, -1.0}) {
        const double zj = z[j] + dir * h;
        if (zj > hi[i] || zj < lo[i]) continue;
        zp[j] = zj;
        const double t = tail_from(k, zp);
        zp[j] = z[j];
        if (std::isfinite(t)) {
          g[j] = (t - tail_[static_cast<std::size_t>(k)]) / (zj - z[j]);
          break;
        }
      }
    }
  }

 private:
  double tail_from(int k, const VectorXd& z) {
    scratch_ = states_[static_cast<std::size_t>(k)];
    double sum = 0.0;
    for (int m = k; m < N_; ++m) {
      const auto u = z.segment(m * nc_, nc_);
      sum += prob_.cost(scratch_, u);
      try {
        if (sur_) {
          // Steps after k see the cached controls, so only step k needs a new
          // matrix exponential.
          scratch_ = m == k ? sur_->step(scratch_, u)
                            : sur_->step_with(transitions_[static_cast<std::size_t>(m)], scratch_);
        } else {
          scratch_ = prob_.model->step(scratch_, u);
        }
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
      if (!scratch_.allFinite()) return std::numeric_limits<double>::infinity();
      sum += rho * box_.squared_distance(scratch_);
    }
    return sum;
  }

  const MpcProblem& prob_;
  int N_;
  Index nc_;
  VectorXd x0_;
  Box box_;
  std::vector<VectorXd> states_;
  std::vector<double> terms_;
  std::vector<double> tail_;
  VectorXd cached_z_;
  VectorXd scratch_;
  bool cached_ = false;
  const BilinearSurrogate* sur_ = nullptr;
  std::vector<MatrixXd> transitions_;  // surrogate only: per-step P_x exp(dt L^u)
};

std::vector<VectorXd> unstack(const VectorXd& z, int N, Index nc) {
  std::vector<VectorXd> u;
  for (int k = 0; k < N; ++k) u.emplace_back(z.segment(k * nc, nc));
  return u;
}

double max_violation(const Box& box, const std::vector<VectorXd>& states) {
  double v = 0.0;
  for (std::size_t k = 1; k < states.size(); ++k) v = std::max(v, box.violation(states[k]));
  return v;
}

}  // namespace

OcpSolution solve_ocp(const MpcProblem& prob, const ConstVecRef& x0,
                      const std::vector<VectorXd>* warm_start) {
  if (!prob.model) throw ContractViolation("solve_ocp: no prediction model");
  const int N = prob.horizon;
  if (N < 1) throw ContractViolation("solve_ocp: horizon must be >= 1");
  const Index nc = prob.model->n_c();
  if (x0.size() != prob.model->n_x()) throw ContractViolation("solve_ocp: state dimension");
  if (!x0.allFinite()) throw ContractViolation("solve_ocp: non-finite initial state");
  if (!prob.state_box.contains(x0)) {
    throw InfeasibleError("solve_ocp: initial state outside the state box (violation " +
                          format_double(prob.state_box.violation(x0)) + ")");
  }
  const Box box = prob.applicable_state_box();

  const VectorXd lo = prob.control_box.lower.replicate(N, 1);
  const VectorXd hi = prob.control_box.upper.replicate(N, 1);

  struct Start {
    const char* name;
    VectorXd z;
  };
  std::vector<Start> starts;
  if (warm_start && static_cast<int>(warm_start->size()) == N) {
    VectorXd z(N * nc);
    for (int k = 0; k < N; ++k) z.segment(k * nc, nc) = (*warm_start)[static_cast<std::size_t>(k)];
    starts.push_back({"warm", z});
  }
  if (prob.solver.restarts >= 1 || starts.empty()) starts.push_back({"zero", VectorXd::Zero(N * nc)});
  if (prob.solver.restarts >= 2) {
    std::mt19937_64 rng(prob.solver.seed);
    VectorXd z(N * nc);
    for (Index j = 0; j < z.size(); ++j) {
      const double a = std::isfinite(lo[j]) ? lo[j] : -1.0;
      const double b = std::isfinite(hi[j]) ? hi[j] : 1.0;
      z[j] = a + (b - a) * uniform01(rng());
    }
    starts.push_back({"random", z});
  }

  ProjectedBfgsOptions bopts;
  bopts.max_iterations = prob.solver.max_iterations;
  bopts.gradient_tolerance = prob.solver.gradient_tolerance;
  bopts.function_tolerance = prob.solver.function_tolerance;

  Shooting shooting(prob, N, x0, box);
  const Objective f = [&](const VectorXd& z) { return shooting.value(z); };
  const Gradient grad = [&](const VectorXd& z, double fz, VectorXd& g) { shooting.gradient(z, fz, g); };

  std::optional<OcpSolution> best;
  double best_violation = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    VectorXd z = start.z.cwiseMax(lo).cwiseMin(hi);
    OcpSolution sol;
    sol.start = start.name;
    RolloutResult roll;
    for (double rho : prob.solver.penalty_schedule) {
      shooting.rho = rho;
      const ProjectedBfgsResult r = projected_bfgs(f, grad, lo, hi, z, bopts);
      z = r.z;
      sol.iterations += r.iterations;
      sol.evaluations += r.evaluations;
      sol.gradient_norm = r.projected_gradient;
      sol.stop = r.reason;
      sol.converged = r.converged();
      sol.penalty_weight = rho;
      roll = rollout_cost(*prob.model, prob.cost, x0, unstack(z, N, nc));
      sol.penalty_residual = roll.ok ? max_violation(box, roll.states) : std::numeric_limits<double>::infinity();
      if (sol.penalty_residual <= prob.solver.constraint_tolerance) break;
    }
    best_violation = std::min(best_violation, sol.penalty_residual);
    sol.feasible = roll.ok && sol.penalty_residual <= prob.solver.constraint_tolerance;
    if (!sol.feasible) continue;
    sol.u_star = unstack(z, N, nc);
    sol.value = roll.cost;
    sol.predicted_states = std::move(roll.states);
    if (sol.converged) return sol;
    if (!best || sol.value < best->value) best = std::move(sol);
  }
  if (!best) {
    throw InfeasibleError("solve_ocp: no admissible control sequence found (smallest state-box violation " +
                          format_double(best_violation) + ")");
  }
  return *best;
}

VectorXd mpc_feedback(const MpcProblem& prob, const ConstVecRef& x) {
  return solve_ocp(prob, x).u_star.front();
}

bool admissible(const MpcProblem& prob, const ConstVecRef& x0, const std::vector<VectorXd>& controls) {
  if (!prob.model) throw ContractViolation("admissible: no prediction model");
  if (static_cast<int>(controls.size()) > prob.horizon) {
    throw ContractViolation("admissible: more controls than the horizon");
  }
  for (const auto& u : controls) {
    if (u.size() != prob.control_box.dim() || !prob.control_box.contains(u)) return false;
  }
  if (!prob.state_box.contains(x0)) return false;
  const RolloutResult r = rollout_cost(*prob.model, prob.cost, x0, controls);
  if (!r.ok) return false;
  const Box box = prob.applicable_state_box();
  for (std::size_t k = 1; k < r.states.size(); ++k) {
    if (!box.contains(r.states[k])) return false;
  }
  return true;
}

ClosedLoopResult closed_loop_run(const SampledDataMap& plant, const MpcProblem& prob,
                                 const ConstVecRef& x0, int steps) {
  prob.validate();
  if (plant.system().n_x() != prob.model->n_x() || plant.system().n_c() != prob.model->n_c()) {
    throw ContractViolation("closed_loop_run: plant and model dimensions differ");
  }
  if (steps < 0) throw ContractViolation("closed_loop_run: steps must be >= 0");
  ClosedLoopResult run;
  Trajectory& traj = run.trajectory;
  traj.dt = plant.dt();
  traj.states.push_back(x0);
  std::vector<VectorXd> warm;
  for (int n = 0; n < steps; ++n) {
    const VectorXd& x = traj.states.back();
    OcpSolution sol;
    try {
      sol = solve_ocp(prob, x, warm.empty() ? nullptr : &warm);
    } catch (const Error& e) {
      traj.diagnostic = "step " + std::to_string(n) + ": " + e.what();
      break;
    }
    const VectorXd u = sol.u_star.front();
    VectorXd next;
    try {
      next = plant.step(x, u);
    } catch (const Error& e) {
      traj.diagnostic = "step " + std::to_string(n) + ": plant failed: " + e.what();
      break;
    }
    if (!sol.converged) ++run.nonconverged_solves;
    run.values.push_back(sol.value);
    run.stage_costs.push_back(prob.cost(x, u));
    traj.costs.push_back(run.stage_costs.back());
    traj.controls.push_back(u);
    traj.states.push_back(std::move(next));
    warm.assign(sol.u_star.begin() + 1, sol.u_star.end());
    warm.push_back(sol.u_star.back());
  }
  return run;
}

void write_closedloop_csv(std::ostream& os, const ClosedLoopResult& run) {
  const Trajectory& t = run.trajectory;
  const Index nx = t.states.empty() ? 0 : t.states.front().size();
  const Index nc = t.controls.empty() ? 0 : t.controls.front().size();
  os << "n,norm_x";
  for (Index i = 1; i <= nx; ++i) os << ",x_" << i;
  for (Index i = 1; i <= nc; ++i) os << ",u_" << i;
  os << ",V_N,stage_cost\n";
  for (std::size_t n = 0; n < t.states.size(); ++n) {
    const VectorXd& x = t.states[n];
    os << n << ',' << format_double(x.norm());
    for (Index i = 0; i < nx; ++i) os << ',' << format_double(x[i]);
    if (n < t.controls.size()) {
      for (Index i = 0; i < nc; ++i) os << ',' << format_double(t.controls[n][i]);
      os << ',' << format_double(run.values[n]) << ',' << format_double(run.stage_costs[n]);
    } else {
      for (Index i = 0; i < nc; ++i) os << ',';
      os << ",,";
    }
    os << '\n';
  }
}

std::vector<VectorXd> growth_sample_grid(const Box& box, Index per_axis, double exclude_radius) {
  if (per_axis < 1) throw ContractViolation("growth_sample_grid: per_axis must be >= 1");
  const Index n = box.dim();
  Index total = 1;
  for (Index i = 0; i < n; ++i) total *= per_axis;
  std::vector<VectorXd> pts;
  for (Index j = 0; j < total; ++j) {
    VectorXd x(n);
    Index r = j;
    for (Index i = 0; i < n; ++i) {
      const Index k = r % per_axis;
      r /= per_axis;
      const double t = per_axis == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(per_axis - 1);
      x[i] = box.lower[i] + t * (box.upper[i] - box.lower[i]);
    }
    if (x.norm() > exclude_radius) pts.push_back(std::move(x));
  }
  return pts;
}

GrowthBounds estimate_growth_bounds(const MpcProblem& prob, const std::vector<VectorXd>& samples,
                                    int k_max, int jobs) {
  if (k_max < 1) throw ContractViolation("estimate_growth_bounds: k_max must be >= 1");
  if (samples.empty()) throw ContractViolation("estimate_growth_bounds: no samples");
  for (const auto& x : samples) {
    if (x.norm() <= 1e-6) {
      throw ContractViolation("estimate_growth_bounds: samples must exclude the 1e-6 ball around 0");
    }
  }
  const auto K = static_cast<std::size_t>(k_max);
  // ratio[s][k-1]; NaN marks an infeasible OCP.
  std::vector<std::vector<double>> ratio(samples.size(), std::vector<double>(K, std::nan("")));
  std::vector<std::string> notes(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t s) {
    MpcProblem p = prob;
    std::vector<VectorXd> warm;
    const double ell = prob.cost.ell_star(samples[s]);
    for (int k = 1; k <= k_max; ++k) {
      p.horizon = k;
      try {
        const OcpSolution sol = solve_ocp(p, samples[s], warm.empty() ? nullptr : &warm);
        ratio[s][static_cast<std::size_t>(k) - 1] = sol.value / ell;
        warm = sol.u_star;
      } catch (const InfeasibleError& e) {
        if (notes[s].empty()) notes[s] = "sample " + std::to_string(s) + " skipped at k=" + std::to_string(k) + ": " + e.what();
        warm.clear();
      }
      warm.push_back(VectorXd::Zero(prob.model->n_c()));
    }
  });

  GrowthBounds gb;
  gb.model_id = prob.model->id();
  gb.B.assign(K, 1.0);
  std::vector<bool> used(samples.size(), false);
  for (std::size_t k = 0; k < K; ++k) {
    double m = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      if (std::isnan(ratio[s][k])) continue;
      m = std::max(m, ratio[s][k]);
      used[s] = true;
    }
    gb.B[k] = k > 0 ? std::max(gb.B[k - 1], m) : m;
  }
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (!notes[s].empty()) gb.warnings.push_back(notes[s]);
    if (used[s]) ++gb.samples_used;
  }
  if (gb.samples_used == 0) throw InfeasibleError("estimate_growth_bounds: every sample was infeasible");
  return gb;
}

double suboptimality_index(const std::vector<double>& B, int N, double omega) {
  if (N < 2) throw ContractViolation("suboptimality_index: N must be >= 2");
  if (static_cast<int>(B.size()) < N) {
    throw ContractViolation("suboptimality_index: growth bounds do not cover k = 2.." + std::to_string(N));
  }
  auto b = [&](int k) { return B[static_cast<std::size_t>(k - 1)]; };
  double prod_b = 1.0;
  for (int i = 2; i <= N; ++i) prod_b *= b(i);
  double prod_bm1 = 1.0;
  for (int i = 3; i <= N; ++i) prod_bm1 *= b(i) - 1.0;
  const double lead = b(2) - omega;
  const double num = lead * (b(N) - 1.0) * prod_bm1;
  const double den = prod_b - lead * prod_bm1;
  if (den == 0.0 || !std::isfinite(den)) {
    throw DegenerateIndexError("suboptimality_index: zero denominator at N=" + std::to_string(N));
  }
  // (den - num) / den rather than 1 - num/den: exact for rational inputs
  // like B = (2, 2).
  return (den - num) / den;
}

double suboptimality_index(const GrowthBounds& B, int N, double omega) {
  return suboptimality_index(B.B, N, omega);
}

StabilityVerdict practical_stability_check(const Trajectory& traj, double r, double settle_fraction) {
  if (traj.states.empty()) throw ContractViolation("practical_stability_check: empty trajectory");
  StabilityVerdict v;
  v.radius = r;
  v.settle_fraction = settle_fraction;
  v.length = static_cast<Index>(traj.states.size());
  std::vector<double> norms;
  for (const auto& x : traj.states) norms.push_back(x.norm());
  v.final_norm = norms.back();
  for (Index n = 0; n < v.length; ++n) {
    if (norms[static_cast<std::size_t>(n)] <= r) {
      v.first_entry = n;
      break;
    }
  }
  Index n0 = v.length;
  while (n0 > 0 && norms[static_cast<std::size_t>(n0) - 1] <= r) --n0;
  v.settle_index = n0 < v.length ? n0 : -1;
  if (v.first_entry >= 0) {
    for (auto n = static_cast<std::size_t>(v.first_entry); n < norms.size(); ++n) {
      v.post_entry_max = std::max(v.post_entry_max, norms[n]);
    }
  }
  v.stable = v.settle_index >= 0 &&
             static_cast<double>(v.settle_index) <= settle_fraction * static_cast<double>(v.length);
  return v;
}

RelaxedDpReport relaxed_dp_check(const ClosedLoopResult& run, double alpha) {
  RelaxedDpReport rep;
  rep.alpha = alpha;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n + 1 < run.values.size(); ++n) {
    const double margin = run.values[n] - run.values[n + 1] - alpha * run.stage_costs[n];
    rep.worst_margin = std::min(rep.worst_margin, margin);
    if (margin < -1e-9) rep.violations.push_back(static_cast<Index>(n));
  }
  if (!std::isfinite(rep.worst_margin)) rep.worst_margin = 0.0;
  return rep;
}

}  // namespace kmpc
