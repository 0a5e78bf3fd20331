#ifndef KMPC_OPTIMIZER_HPP
#define KMPC_OPTIMIZER_HPP

#include "kmpc/types.hpp"

#include <functional>
#include <string>

namespace kmpc {

struct ProjectedBfgsOptions {
  int max_iterations = 200;
  /// Stop when the projected gradient's max-norm falls below this.
  double gradient_tolerance = 1e-12;
  /// Stop when one iteration reduces f by less than this times max(|f|, 1e-300).
  double function_tolerance = 1e-14;
  double armijo = 1e-4;
  int max_backtracks = 50;
};

enum class StopReason { gradient, function, line_search, max_iterations, nonfinite_start };

std::string to_string(StopReason r);

struct ProjectedBfgsResult {
  VectorXd z;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  double projected_gradient = 0.0;  // max-norm at z
  StopReason reason = StopReason::max_iterations;

  bool converged() const { return reason == StopReason::gradient || reason == StopReason::function; }
};

/// Objective value; +inf marks points where it is undefined.
using Objective = std::function<double(const VectorXd& z)>;
/// Gradient at z, given f(z); writes into g.
using Gradient = std::function<void(const VectorXd& z, double fz, VectorXd& g)>;

/// Minimizes f over the box [lo, hi] with a projected BFGS method: variables
/// at a bound with the gradient pointing outward are held fixed, the inverse
/// Hessian approximation acts on the free ones, and a projected Armijo
/// backtracking search keeps every iterate inside the box. The approximation
/// is reset to a scaled identity when it stops producing descent.
ProjectedBfgsResult projected_bfgs(const Objective& f, const Gradient& grad, const VectorXd& lo,
                                   const VectorXd& hi, const VectorXd& z0,
                                   const ProjectedBfgsOptions& opts = {});

}  // namespace kmpc

#endif  // KMPC_OPTIMIZER_HPP
