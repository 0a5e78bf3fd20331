#ifndef KMPC_DYNAMICS_HPP
#define KMPC_DYNAMICS_HPP

#include "kmpc/types.hpp"

#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace kmpc {

/// A vector field R^{n_x} -> R^{n_x}, written into a caller-owned buffer.
using FieldFn = std::function<void(const ConstVecRef& x, VecRef out)>;

/// Continuous-time control-affine dynamics
///   xdot = g0(x) + sum_i g_i(x) u_i.
///
/// Immutable after construction. The drift must vanish at the origin; the
/// constructor checks this to 1e-9 so that the sampled map keeps (0, 0) as an
/// equilibrium.
class ControlAffineSystem {
 public:
  ControlAffineSystem(std::string name, Index n_x, Index n_c, FieldFn drift,
                      std::vector<FieldFn> inputs);

  const std::string& name() const { return name_; }
  Index n_x() const { return n_x_; }
  Index n_c() const { return n_c_; }

  void drift(const ConstVecRef& x, VecRef out) const;
  void input(Index i, const ConstVecRef& x, VecRef out) const;
  VectorXd drift(const ConstVecRef& x) const;
  VectorXd input(Index i, const ConstVecRef& x) const;

  /// g0(x) + sum_i g_i(x) u_i.
  void vector_field(const ConstVecRef& x, const ConstVecRef& u, VecRef out) const;
  VectorXd vector_field(const ConstVecRef& x, const ConstVecRef& u) const;

 private:
  std::string name_;
  Index n_x_;
  Index n_c_;
  FieldFn drift_;
  std::vector<FieldFn> inputs_;
};

// Built-in catalog.

/// xdot1 = x2, xdot2 = mu (1 - x1^2) x2 - x1 + u.
ControlAffineSystem van_der_pol(double mu);

/// xdot = A x + B u.
ControlAffineSystem linear_system(const MatrixXd& A, const MatrixXd& B);

/// One term c * prod_j x_j^{e_j} of a polynomial vector field component.
struct PolynomialTerm {
  double coefficient = 0.0;
  std::vector<int> exponents;
};

/// Polynomial field given per component as a sum of terms.
struct PolynomialField {
  std::vector<std::vector<PolynomialTerm>> components;
};

ControlAffineSystem polynomial_system(std::string name, Index n_x, const PolynomialField& drift,
                                      const std::vector<PolynomialField>& inputs);

/// Exothermic A -> B reaction in a stirred tank, written in coordinates
/// shifted to a steady state (C_As, T_rs) with heat input Q as the control.
/// All physical constants are caller-supplied.
struct CstrParameters {
  double F = 0.0;       // volumetric flow
  double V_r = 0.0;     // reactor volume
  double C_A0 = 0.0;    // feed concentration
  double k0 = 0.0;      // pre-exponential factor
  double E = 0.0;       // activation energy
  double R_gas = 0.0;   // gas constant
  double T_A0 = 0.0;    // feed temperature
  double delta_H = 0.0; // reaction enthalpy
  double rho = 0.0;     // density
  double C_p = 0.0;     // heat capacity
  double C_As = 0.0;    // steady-state concentration
  double T_rs = 0.0;    // steady-state temperature
};

ControlAffineSystem cstr_system(const CstrParameters& p);

/// Unshifted CSTR right-hand side at physical state (C_A, T_r) and heat Q.
VectorXd cstr_physical_rhs(const CstrParameters& p, const ConstVecRef& physical_state, double Q);

struct IntegratorConfig {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  /// Initial step guess; <= 0 selects one automatically from the field.
  double initial_step = 0.0;

  void validate() const;
};

struct IntegrationStats {
  int accepted = 0;
  int rejected = 0;
  int evaluations = 0;
};

/// Adaptive Runge-Kutta-Fehlberg 4(5) with PI step-size control, integrating
/// xdot = f(x, u) over [0, duration] with u held constant. The fifth-order
/// solution is propagated.
///
/// Throws IntegrationError (carrying the last accepted time) on step-size
/// underflow or a non-finite state.
VectorXd integrate_zoh(const ControlAffineSystem& sys, const IntegratorConfig& cfg,
                       const ConstVecRef& x0, const ConstVecRef& u, double duration,
                       IntegrationStats* stats = nullptr);

/// The sampled-data plant x+ = f(x, u): flow of the system over one sampling
/// period under zero-order hold.
class SampledDataMap {
 public:
  SampledDataMap(ControlAffineSystem system, double dt, IntegratorConfig integ = {});

  const ControlAffineSystem& system() const { return system_; }
  double dt() const { return dt_; }
  const IntegratorConfig& integrator() const { return integ_; }

  VectorXd integrate_zoh(const ConstVecRef& x0, const ConstVecRef& u) const;
  VectorXd step(const ConstVecRef& x, const ConstVecRef& u) const { return integrate_zoh(x, u); }

 private:
  ControlAffineSystem system_;
  double dt_;
  IntegratorConfig integ_;
};

/// Free-function form of SampledDataMap::step.
VectorXd sampled_step(const SampledDataMap& map, const ConstVecRef& x, const ConstVecRef& u);

struct Trajectory {
  std::vector<VectorXd> states;
  std::vector<VectorXd> controls;  // one shorter than states
  double dt = 0.0;
  std::vector<double> costs;       // optional per-step stage costs
  std::string diagnostic;          // non-empty when the run was cut short

  bool truncated() const { return !diagnostic.empty(); }
  std::size_t length() const { return states.size(); }
};

using Feedback = std::function<VectorXd(const ConstVecRef& x)>;

/// states[k+1] = sampled_step(states[k], feedback(states[k])). A throwing
/// feedback or integrator stops the run and the partial trajectory is returned
/// with a diagnostic.
Trajectory simulate_closed_loop(const SampledDataMap& map, const Feedback& feedback,
                                const ConstVecRef& x0, int steps);

/// CSV with header `step,t,x_1..x_n,u_1..u_m`. The final row has empty
/// control fields.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace kmpc

#endif  // KMPC_DYNAMICS_HPP
