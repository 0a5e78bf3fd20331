#include "kmpc/dynamics.hpp"

#include "kmpc/format.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace kmpc {

namespace {

double monomial_value(const std::vector<int>& e, const ConstVecRef& x) {
  double v = 1.0;
  for (std::size_t j = 0; j < e.size(); ++j) {
    for (int p = 0; p < e[j]; ++p) v *= x[static_cast<Index>(j)];
  }
  return v;
}

FieldFn make_polynomial_field(Index n_x, PolynomialField field) {
  if (static_cast<Index>(field.components.size()) != n_x) {
    throw ContractViolation("polynomial field: expected one component per state");
  }
  for (const auto& comp : field.components) {
    for (const auto& term : comp) {
      if (static_cast<Index>(term.exponents.size()) != n_x) {
        throw ContractViolation("polynomial field: exponent vector has wrong length");
      }
      for (int e : term.exponents) {
        if (e < 0) throw ContractViolation("polynomial field: negative exponent");
      }
    }
  }
  return [field = std::move(field)](const ConstVecRef& x, VecRef out) {
    for (std::size_t k = 0; k < field.components.size(); ++k) {
      double s = 0.0;
      for (const auto& term : field.components[k]) {
        s += term.coefficient * monomial_value(term.exponents, x);
      }
      out[static_cast<Index>(k)] = s;
    }
  };
}

}  // namespace

ControlAffineSystem::ControlAffineSystem(std::string name, Index n_x, Index n_c, FieldFn drift,
                                         std::vector<FieldFn> inputs)
    : name_(std::move(name)),
      n_x_(n_x),
      n_c_(n_c),
      drift_(std::move(drift)),
      inputs_(std::move(inputs)) {
  if (n_x_ < 1) throw ContractViolation("ControlAffineSystem: n_x must be positive");
  if (n_c_ < 0 || static_cast<Index>(inputs_.size()) != n_c_) {
    throw ContractViolation("ControlAffineSystem: expected n_c input fields");
  }
  if (!drift_) throw ContractViolation("ControlAffineSystem: missing drift");
  const VectorXd g0 = this->drift(VectorXd::Zero(n_x_));
  if (!g0.allFinite() || g0.lpNorm<Eigen::Infinity>() > 1e-9) {
    throw ContractViolation("ControlAffineSystem '" + name_ +
                            "': drift does not vanish at the origin (|g0(0)| = " +
                            format_double(g0.lpNorm<Eigen::Infinity>()) + ")");
  }
}

void ControlAffineSystem::drift(const ConstVecRef& x, VecRef out) const {
  if (x.size() != n_x_ || out.size() != n_x_) {
    throw ContractViolation("drift: state dimension mismatch");
  }
  drift_(x, out);
}

void ControlAffineSystem::input(Index i, const ConstVecRef& x, VecRef out) const {
  if (i < 0 || i >= n_c_) throw ContractViolation("input: index out of range");
  if (x.size() != n_x_ || out.size() != n_x_) {
    throw ContractViolation("input: state dimension mismatch");
  }
  inputs_[static_cast<std::size_t>(i)](x, out);
}

VectorXd ControlAffineSystem::drift(const ConstVecRef& x) const {
  VectorXd out(n_x_);
  drift(x, out);
  return out;
}

VectorXd ControlAffineSystem::input(Index i, const ConstVecRef& x) const {
  VectorXd out(n_x_);
  input(i, x, out);
  return out;
}

void ControlAffineSystem::vector_field(const ConstVecRef& x, const ConstVecRef& u,
                                       VecRef out) const {
  if (x.size() != n_x_ || u.size() != n_c_ || out.size() != n_x_) {
    throw ContractViolation("vector_field: dimension mismatch (n_x=" + std::to_string(n_x_) +
                            ", n_c=" + std::to_string(n_c_) + ")");
  }
  drift_(x, out);
  if (n_c_ == 0) return;
  thread_local VectorXd g;
  g.resize(n_x_);
  for (Index i = 0; i < n_c_; ++i) {
    if (u[i] == 0.0) continue;
    inputs_[static_cast<std::size_t>(i)](x, g);
    out += u[i] * g;
  }
}

VectorXd ControlAffineSystem::vector_field(const ConstVecRef& x, const ConstVecRef& u) const {
  VectorXd out(n_x_);
  vector_field(x, u, out);
  return out;
}

ControlAffineSystem van_der_pol(double mu) {
  auto drift = [mu](const ConstVecRef& x, VecRef out) {
    out[0] = x[1];
    out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
  };
  auto input = [](const ConstVecRef&, VecRef out) {
    out[0] = 0.0;
    out[1] = 1.0;
  };
  return ControlAffineSystem("van_der_pol", 2, 1, drift, {input});
}

ControlAffineSystem linear_system(const MatrixXd& A, const MatrixXd& B) {
  if (A.rows() != A.cols()) throw ContractViolation("linear_system: A must be square");
  if (B.rows() != A.rows()) throw ContractViolation("linear_system: B has wrong row count");
  std::vector<FieldFn> inputs;
  for (Index i = 0; i < B.cols(); ++i) {
    VectorXd b = B.col(i);
    inputs.emplace_back([b](const ConstVecRef&, VecRef out) { out = b; });
  }
  return ControlAffineSystem("linear", A.rows(), B.cols(),
                             [A](const ConstVecRef& x, VecRef out) { out.noalias() = A * x; },
                             std::move(inputs));
}

ControlAffineSystem polynomial_system(std::string name, Index n_x, const PolynomialField& drift,
                                      const std::vector<PolynomialField>& inputs) {
  std::vector<FieldFn> in;
  for (const auto& f : inputs) in.push_back(make_polynomial_field(n_x, f));
  return ControlAffineSystem(std::move(name), n_x, static_cast<Index>(inputs.size()),
                             make_polynomial_field(n_x, drift), std::move(in));
}

VectorXd cstr_physical_rhs(const CstrParameters& p, const ConstVecRef& s, double Q) {
  const double c = s[0];
  const double t = s[1];
  const double rate = p.k0 * std::exp(-p.E / (p.R_gas * t)) * c * c;
  VectorXd out(2);
  out[0] = p.F / p.V_r * (p.C_A0 - c) - rate;
  out[1] = p.F / p.V_r * (p.T_A0 - t) - p.delta_H / (p.rho * p.C_p) * rate +
           Q / (p.rho * p.C_p * p.V_r);
  return out;
}

ControlAffineSystem cstr_system(const CstrParameters& p) {
  for (double v : {p.F, p.V_r, p.k0, p.E, p.R_gas, p.rho, p.C_p, p.T_rs}) {
    if (!(v > 0.0)) throw ContractViolation("cstr_system: physical constants must be positive");
  }
  auto drift = [p](const ConstVecRef& x, VecRef out) {
    const double c = x[0] + p.C_As;
    const double t = x[1] + p.T_rs;
    const double rate = p.k0 * std::exp(-p.E / (p.R_gas * t)) * c * c;
    out[0] = p.F / p.V_r * (p.C_A0 - c) - rate;
    out[1] = p.F / p.V_r * (p.T_A0 - t) - p.delta_H / (p.rho * p.C_p) * rate;
  };
  const double gain = 1.0 / (p.rho * p.C_p * p.V_r);
  auto input = [gain](const ConstVecRef&, VecRef out) {
    out[0] = 0.0;
    out[1] = gain;
  };
  return ControlAffineSystem("cstr", 2, 1, drift, {input});
}

void IntegratorConfig::validate() const {
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0) || !(max_step > 0.0)) {
    throw ContractViolation("IntegratorConfig: tolerances and max_step must be positive");
  }
}

namespace {

// Fehlberg 4(5) tableau. The field is autonomous, so the nodes c_i are not needed.
constexpr double a21 = 1.0 / 4.0;
constexpr double a31 = 3.0 / 32.0, a32 = 9.0 / 32.0;
constexpr double a41 = 1932.0 / 2197.0, a42 = -7200.0 / 2197.0, a43 = 7296.0 / 2197.0;
constexpr double a51 = 439.0 / 216.0, a52 = -8.0, a53 = 3680.0 / 513.0, a54 = -845.0 / 4104.0;
constexpr double a61 = -8.0 / 27.0, a62 = 2.0, a63 = -3544.0 / 2565.0, a64 = 1859.0 / 4104.0,
                 a65 = -11.0 / 40.0;
constexpr double b1 = 16.0 / 135.0, b3 = 6656.0 / 12825.0, b4 = 28561.0 / 56430.0,
                 b5 = -9.0 / 50.0, b6 = 2.0 / 55.0;
// fifth minus fourth order weights
constexpr double e1 = 1.0 / 360.0, e3 = -128.0 / 4275.0, e4 = -2197.0 / 75240.0, e5 = 1.0 / 50.0,
                 e6 = 2.0 / 55.0;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;
// PI controller exponents for an order-4 error estimate.
constexpr double kAlpha = 0.7 / 5.0;
constexpr double kBeta = 0.4 / 5.0;

double error_norm(const VectorXd& err, const ConstVecRef& y0, const VectorXd& y1,
                  const IntegratorConfig& cfg) {
  double s = 0.0;
  for (Index i = 0; i < err.size(); ++i) {
    const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(err.size()));
}

}  // namespace

VectorXd integrate_zoh(const ControlAffineSystem& sys, const IntegratorConfig& cfg,
                       const ConstVecRef& x0, const ConstVecRef& u, double duration,
                       IntegrationStats* stats) {
  cfg.validate();
  const Index n = sys.n_x();
  if (x0.size() != n || u.size() != sys.n_c()) {
    throw ContractViolation("integrate_zoh: dimension mismatch");
  }
  if (!x0.allFinite() || !u.allFinite()) {
    throw ContractViolation("integrate_zoh: non-finite initial state or control");
  }
  if (duration < 0.0) throw ContractViolation("integrate_zoh: negative duration");

  VectorXd y = x0;
  if (duration == 0.0) return y;

  VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), tmp(n), y_new(n), err(n);
  IntegrationStats local;
  auto f = [&](const VectorXd& xs, VectorXd& out) {
    sys.vector_field(xs, u, out);
    ++local.evaluations;
  };

  tmp = y;
  f(tmp, k1);

  double h = cfg.initial_step;
  if (!(h > 0.0)) {
    // Hairer-Norsett-Wanner starting step heuristic.
    double d0 = 0.0, d1 = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double sc = cfg.abs_tol + cfg.rel_tol * std::abs(y[i]);
      d0 += (y[i] / sc) * (y[i] / sc);
      d1 += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = std::sqrt(d0 / n);
    d1 = std::sqrt(d1 / n);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, duration);
    tmp = y + h0 * k1;
    f(tmp, k2);
    double d2 = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double sc = cfg.abs_tol + cfg.rel_tol * std::abs(y[i]);
      const double r = (k2[i] - k1[i]) / sc;
      d2 += r * r;
    }
    d2 = std::sqrt(d2 / n) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }
  h = std::min({h, cfg.max_step, duration});

  double t = 0.0;
  double err_prev = 1e-4;
  bool last_rejected = false;
  const double min_step = 1e-14 * std::max(1.0, duration);

  while (t < duration) {
    if (h < min_step) {
      throw IntegrationError("RK45 step size underflow at t=" + format_double(t) +
                                 " (system '" + sys.name() + "')",
                             t);
    }
    bool final_step = false;
    if (t + h >= duration) {
      h = duration - t;
      final_step = true;
    }

    tmp = y + h * (a21 * k1);
    f(tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    f(tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(tmp, k6);

    y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6);
    const double en = error_norm(err, y, y_new, cfg);

    if (!std::isfinite(en) || !y_new.allFinite()) {
      ++local.rejected;
      last_rejected = true;
      h *= kMinFactor;
      continue;
    }

    if (en <= 1.0) {
      ++local.accepted;
      t = final_step ? duration : t + h;
      y = y_new;
      double factor = en == 0.0 ? kMaxFactor
                                : kSafety * std::pow(en, -kAlpha) * std::pow(err_prev, kBeta);
      factor = std::clamp(factor, kMinFactor, kMaxFactor);
      if (last_rejected) factor = std::min(factor, 1.0);
      err_prev = std::max(en, 1e-4);
      last_rejected = false;
      h = std::min(h * factor, cfg.max_step);
      if (t < duration) {
        tmp = y;
        f(tmp, k1);
      }
    } else {
      ++local.rejected;
      last_rejected = true;
      h *= std::max(kMinFactor, kSafety * std::pow(en, -1.0 / 5.0));
    }
  }

  if (stats != nullptr) *stats = local;
  return y;
}

SampledDataMap::SampledDataMap(ControlAffineSystem system, double dt, IntegratorConfig integ)
    : system_(std::move(system)), dt_(dt), integ_(integ) {
  if (!(dt_ > 0.0)) throw ContractViolation("SampledDataMap: dt must be positive");
  integ_.validate();
}

VectorXd SampledDataMap::integrate_zoh(const ConstVecRef& x0, const ConstVecRef& u) const {
  return kmpc::integrate_zoh(system_, integ_, x0, u, dt_);
}

VectorXd sampled_step(const SampledDataMap& map, const ConstVecRef& x, const ConstVecRef& u) {
  return map.step(x, u);
}

Trajectory simulate_closed_loop(const SampledDataMap& map, const Feedback& feedback,
                                const ConstVecRef& x0, int steps) {
  if (steps < 0) throw ContractViolation("simulate_closed_loop: negative step count");
  Trajectory traj;
  traj.dt = map.dt();
  traj.states.push_back(x0);
  for (int k = 0; k < steps; ++k) {
    const VectorXd& x = traj.states.back();
    VectorXd u;
    try {
      u = feedback(x);
    } catch (const std::exception& e) {
      traj.diagnostic = "feedback failed at step " + std::to_string(k) + ": " + e.what();
      break;
    }
    try {
      VectorXd next = map.step(x, u);
      traj.controls.push_back(std::move(u));
      traj.states.push_back(std::move(next));
    } catch (const Error& e) {
      traj.diagnostic = "plant step failed at step " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  return traj;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  if (traj.states.empty()) return;
  const Index nx = traj.states.front().size();
  const Index nc = traj.controls.empty() ? 0 : traj.controls.front().size();
  os << "step,t";
  for (Index i = 1; i <= nx; ++i) os << ",x_" << i;
  for (Index i = 1; i <= nc; ++i) os << ",u_" << i;
  os << '\n';
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    os << k << ',' << format_double(static_cast<double>(k) * traj.dt);
    for (Index i = 0; i < nx; ++i) os << ',' << format_double(traj.states[k][i]);
    for (Index i = 0; i < nc; ++i) {
      os << ',';
      if (k < traj.controls.size()) os << format_double(traj.controls[k][i]);
    }
    os << '\n';
  }
}

}  // namespace kmpc
