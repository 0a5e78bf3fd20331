#ifndef KMPC_MPC_HPP
#define KMPC_MPC_HPP

#include "kmpc/dynamics.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/optimizer.hpp"
#include "kmpc/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace kmpc {

/// Discrete-time prediction map used inside the optimal control problem.
class PredictionModel {
 public:
  virtual ~PredictionModel() = default;
  virtual Index n_x() const = 0;
  virtual Index n_c() const = 0;
  /// Throws kmpc::Error when the step cannot be evaluated at (x, u).
  virtual VectorXd step(const ConstVecRef& x, const ConstVecRef& u) const = 0;
  /// Surrogate models are held to the tightened state box.
  virtual bool is_surrogate() const { return false; }
  virtual std::string id() const = 0;
};

/// The true sampled-data plant (nominal MPC).
class PlantModel final : public PredictionModel {
 public:
  explicit PlantModel(SampledDataMap map) : map_(std::move(map)) {}
  Index n_x() const override { return map_.system().n_x(); }
  Index n_c() const override { return map_.system().n_c(); }
  VectorXd step(const ConstVecRef& x, const ConstVecRef& u) const override { return map_.step(x, u); }
  std::string id() const override { return "plant:" + map_.system().name(); }
  const SampledDataMap& map() const { return map_; }

 private:
  SampledDataMap map_;
};

/// EDMD bilinear surrogate.
class SurrogateModel final : public PredictionModel {
 public:
  explicit SurrogateModel(BilinearSurrogate sur) : sur_(std::move(sur)) {}
  Index n_x() const override { return sur_.n_x(); }
  Index n_c() const override { return sur_.n_c(); }
  VectorXd step(const ConstVecRef& x, const ConstVecRef& u) const override { return sur_.step(x, u); }
  bool is_surrogate() const override { return true; }
  std::string id() const override { return "surrogate:" + sur_.dictionary().id(); }
  const BilinearSurrogate& surrogate() const { return sur_; }

 private:
  BilinearSurrogate sur_;
};

/// x+ = A x + B u.
class LinearDiscreteModel final : public PredictionModel {
 public:
  LinearDiscreteModel(MatrixXd A, MatrixXd B);
  Index n_x() const override { return A_.rows(); }
  Index n_c() const override { return B_.cols(); }
  VectorXd step(const ConstVecRef& x, const ConstVecRef& u) const override { return A_ * x + B_ * u; }
  std::string id() const override { return "linear-discrete"; }

 private:
  MatrixXd A_, B_;
};

/// l(x, u) = x^T Q x + u^T R u with Q, R symmetric positive definite.
class StageCost {
 public:
  StageCost() = default;  // empty; rejected by MpcProblem::validate
  StageCost(MatrixXd Q, MatrixXd R);

  const MatrixXd& Q() const { return Q_; }
  const MatrixXd& R() const { return R_; }
  double operator()(const ConstVecRef& x, const ConstVecRef& u) const;
  /// inf_u l(x, u) = |x|_Q^2, attained at u = 0.
  double ell_star(const ConstVecRef& x) const { return x.dot(Q_ * x); }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }

 private:
  MatrixXd Q_, R_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

double stage_cost(const StageCost& cost, const ConstVecRef& x, const ConstVecRef& u);

struct SolverConfig {
  int max_iterations = 200;
  double gradient_tolerance = 1e-12;
  double function_tolerance = 1e-14;
  /// Relative forward-difference step; the absolute step for control i is
  /// fd_step * max(|u_i|, |u|_inf, |x0|_inf) (or the smallest positive double).
  double fd_step = 1e-8;
  std::vector<double> penalty_schedule = {1e2, 1e4, 1e6, 1e8, 1e10, 1e12};
  /// Starts after the warm start: the zero sequence, then one random draw.
  int restarts = 2;
  std::uint64_t seed = 0;
  double constraint_tolerance = 1e-9;

  void validate() const;
};

struct MpcProblem {
  int horizon = 0;
  StageCost cost;
  Box control_box;
  Box state_box;
  double epsilon = 0.0;  // tightening radius for surrogate models
  std::shared_ptr<const PredictionModel> model;
  SolverConfig solver;

  /// X, or X shrunk by the epsilon-ball when the model is a surrogate.
  Box applicable_state_box() const;
  /// Checks N >= 2, dimensions, nonempty tightened box and (0, 0) interior.
  void validate() const;
};

struct RolloutResult {
  double cost = 0.0;
  std::vector<VectorXd> states;  // x(0) .. x(N), shorter when the model failed
  bool ok = true;
  std::string diagnostic;
};

/// J = sum_{k<N} l(x(k), u(k)) along x(k+1) = model(x(k), u(k)). A model
/// failure ends the rollout with ok = false and the partial cost.
RolloutResult rollout_cost(const PredictionModel& model, const StageCost& cost, const ConstVecRef& x0,
                           const std::vector<VectorXd>& controls);

struct OcpSolution {
  std::vector<VectorXd> u_star;
  double value = 0.0;  // unpenalized cost of u_star
  std::vector<VectorXd> predicted_states;
  bool feasible = false;
  bool converged = false;
  std::string start;  // "warm", "zero" or "random"
  int iterations = 0;
  int evaluations = 0;
  double gradient_norm = 0.0;
  double penalty_weight = 0.0;
  double penalty_residual = 0.0;  // max state-box violation of the predictions
  StopReason stop = StopReason::max_iterations;
};

/// Single-shooting solve of min J_N(x0, u) over U^N with the state box
/// enforced by an escalating quadratic penalty. Starts: warm (if given),
/// zero, one seeded random sequence; the first converged feasible result is
/// returned, otherwise the best feasible one with converged = false.
///
/// Requires x0 in X. Accepts any horizon >= 1 (growth bounds need N = 1).
/// Throws InfeasibleError when no start yields a feasible sequence.
OcpSolution solve_ocp(const MpcProblem& prob, const ConstVecRef& x0,
                      const std::vector<VectorXd>* warm_start = nullptr);

/// u*(0) of solve_ocp at x.
VectorXd mpc_feedback(const MpcProblem& prob, const ConstVecRef& x);

/// Controls in U and predicted states in the applicable state box.
bool admissible(const MpcProblem& prob, const ConstVecRef& x0, const std::vector<VectorXd>& controls);

struct ClosedLoopResult {
  Trajectory trajectory;       // states on the true plant
  std::vector<double> values;  // V_N at states[n], one per applied control
  std::vector<double> stage_costs;
  int nonconverged_solves = 0;
};

/// Algorithm: measure x(n), solve the OCP with prob.model warm-started from
/// the shifted previous solution, apply u*(0) to the plant. Infeasibility or a
/// plant failure truncates the run with a diagnostic.
ClosedLoopResult closed_loop_run(const SampledDataMap& plant, const MpcProblem& prob,
                                 const ConstVecRef& x0, int steps);

/// Columns n,norm_x,x_1..,u_1..,V_N,stage_cost; the final state's row leaves
/// control, value and cost empty.
void write_closedloop_csv(std::ostream& os, const ClosedLoopResult& run);

struct GrowthBounds {
  std::vector<double> B;  // B[k-1] = B_k, k = 1..k_max, nondecreasing
  Index samples_used = 0;
  std::vector<std::string> warnings;
  std::string model_id;

  double at(int k) const { return B.at(static_cast<std::size_t>(k - 1)); }
  int k_max() const { return static_cast<int>(B.size()); }
};

/// Uniform grid on `box` with `per_axis` points per axis, dropping points
/// within `exclude_radius` of the origin.
std::vector<VectorXd> growth_sample_grid(const Box& box, Index per_axis, double exclude_radius = 1e-6);

/// B_k = running max over k of max_x V_k(x) / l*(x). Samples where an OCP is
/// infeasible are skipped with a warning.
GrowthBounds estimate_growth_bounds(const MpcProblem& prob, const std::vector<VectorXd>& samples,
                                    int k_max, int jobs = 1);

class DegenerateIndexError : public Error {
 public:
  using Error::Error;
};

/// alpha_N = 1 - (B2 - w)(BN - 1) prod_{i=3}^N (Bi - 1)
///               / (prod_{i=2}^N Bi - (B2 - w) prod_{i=3}^N (Bi - 1)),
/// with B[k-1] = B_k. Empty products are 1.
double suboptimality_index(const std::vector<double>& B, int N, double omega = 1.0);
double suboptimality_index(const GrowthBounds& B, int N, double omega = 1.0);

struct StabilityVerdict {
  bool stable = false;
  double radius = 0.0;
  double settle_fraction = 0.0;
  Index length = 0;
  Index first_entry = -1;  // first n with |x(n)| <= r
  Index settle_index = -1; // smallest n0 with |x(n)| <= r for all n >= n0
  double post_entry_max = 0.0;
  double final_norm = 0.0;
};

StabilityVerdict practical_stability_check(const Trajectory& traj, double r, double settle_fraction);

struct RelaxedDpReport {
  double alpha = 0.0;
  std::vector<Index> violations;  // steps where V(n) - V(n+1) < alpha l(x(n), u(n)) - 1e-9
  double worst_margin = 0.0;
};

RelaxedDpReport relaxed_dp_check(const ClosedLoopResult& run, double alpha);

}  // namespace kmpc

#endif  // KMPC_MPC_HPP
