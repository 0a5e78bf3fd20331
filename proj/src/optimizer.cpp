#include "kmpc/optimizer.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace kmpc {

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::gradient: return "gradient";
    case StopReason::function: return "function";
    case StopReason::line_search: return "line_search";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::nonfinite_start: return "nonfinite_start";
  }
  return "unknown";
}

ProjectedBfgsResult projected_bfgs(const Objective& f, const Gradient& grad, const VectorXd& lo,
                                   const VectorXd& hi, const VectorXd& z0,
                                   const ProjectedBfgsOptions& opts) {
  const Index n = z0.size();
  if (lo.size() != n || hi.size() != n) throw ContractViolation("projected_bfgs: bound dimensions");
  if ((lo.array() > hi.array()).any()) throw ContractViolation("projected_bfgs: lower > upper");

  auto project = [&](const VectorXd& v) -> VectorXd { return v.cwiseMax(lo).cwiseMin(hi); };

  // Length of a first, unscaled step: a tenth of the narrowest finite box side.
  double typical = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    const double w = hi[i] - lo[i];
    if (std::isfinite(w) && w > 0.0) typical = std::min(typical, 0.1 * w);
  }
  if (!std::isfinite(typical)) typical = 1.0;

  ProjectedBfgsResult res;
  res.z = project(z0);
  res.f = f(res.z);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) {
    res.reason = StopReason::nonfinite_start;
    return res;
  }
  VectorXd g(n), g_new(n);
  grad(res.z, res.f, g);

  MatrixXd H = MatrixXd::Identity(n, n);
  bool fresh = true;
  std::vector<Index> free_idx;
  free_idx.reserve(static_cast<std::size_t>(n));
  VectorXd d(n), zt(n);

  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    res.projected_gradient = (res.z - project(res.z - g)).lpNorm<Eigen::Infinity>();
    if (res.projected_gradient <= opts.gradient_tolerance) {
      res.reason = StopReason::gradient;
      return res;
    }

    free_idx.clear();
    for (Index i = 0; i < n; ++i) {
      const bool held = (res.z[i] <= lo[i] && g[i] > 0.0) || (res.z[i] >= hi[i] && g[i] < 0.0);
      if (!held) free_idx.push_back(i);
    }

    bool accepted = false;
    double f_trial = res.f;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      d.setZero();
      if (fresh) {
        for (Index i : free_idx) d[i] = -g[i];
      } else {
        for (Index i : free_idx) {
          double s = 0.0;
          for (Index j : free_idx) s -= H(i, j) * g[j];
          d[i] = s;
        }
        if (g.dot(d) >= 0.0) {
          H.setIdentity();
          fresh = true;
          for (Index i : free_idx) d[i] = -g[i];
        }
      }
      const double dmax = d.lpNorm<Eigen::Infinity>();
      if (dmax == 0.0 || g.dot(d) >= 0.0) break;

      double t = fresh ? typical / dmax : 1.0;
      for (int b = 0; b < opts.max_backtracks; ++b, t *= 0.5) {
        zt = project(res.z + t * d);
        if (zt == res.z) break;
        f_trial = f(zt);
        ++res.evaluations;
        if (std::isfinite(f_trial) && f_trial <= res.f + opts.armijo * g.dot(zt - res.z)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (fresh) break;
        H.setIdentity();
        fresh = true;
      }
    }
    if (!accepted) {
      res.reason = StopReason::line_search;
      return res;
    }

    grad(zt, f_trial, g_new);
    const VectorXd s = zt - res.z;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (fresh) H *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const VectorXd Hy = H * y;
      // Inverse BFGS update, expanded to rank-two form.
      H += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) -
           rho * (Hy * s.transpose() + s * Hy.transpose());
      fresh = false;
    }
    const double decrease = res.f - f_trial;
    res.z = zt;
    res.f = f_trial;
    g.swap(g_new);
    if (decrease <= opts.function_tolerance * std::max(std::abs(res.f), 1e-300)) {
      res.projected_gradient = (res.z - project(res.z - g)).lpNorm<Eigen::Infinity>();
      res.reason = StopReason::function;
      return res;
    }
  }
  res.projected_gradient = (res.z - project(res.z - g)).lpNorm<Eigen::Infinity>();
  res.reason = StopReason::max_iterations;
  return res;
}

}  // namespace kmpc
