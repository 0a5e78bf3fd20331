#include "kmpc/types.hpp"

#include <algorithm>
#include <cmath>

namespace kmpc {

Box::Box(VectorXd lo, VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) {
    throw ContractViolation("Box: lower and upper bounds differ in dimension");
  }
}

Box Box::symmetric(Index n, double half_width) {
  return Box(VectorXd::Constant(n, -half_width), VectorXd::Constant(n, half_width));
}

bool Box::empty() const {
  for (Index i = 0; i < dim(); ++i) {
    if (!(lower[i] <= upper[i])) return true;
  }
  return false;
}

bool Box::contains(const ConstVecRef& x, double tol) const {
  if (x.size() != dim()) throw ContractViolation("Box::contains: dimension mismatch");
  for (Index i = 0; i < dim(); ++i) {
    if (!(x[i] >= lower[i] - tol && x[i] <= upper[i] + tol)) return false;
  }
  return true;
}

double Box::violation(const ConstVecRef& x) const {
  double v = 0.0;
  for (Index i = 0; i < dim(); ++i) {
    v = std::max({v, lower[i] - x[i], x[i] - upper[i]});
  }
  return v;
}

double Box::squared_distance(const ConstVecRef& x) const {
  double s = 0.0;
  for (Index i = 0; i < dim(); ++i) {
    const double d = std::max({0.0, lower[i] - x[i], x[i] - upper[i]});
    s += d * d;
  }
  return s;
}

VectorXd Box::project(const ConstVecRef& x) const {
  return x.cwiseMax(lower).cwiseMin(upper);
}

Box Box::shrink(double radius) const {
  if (radius < 0.0) throw ContractViolation("Box::shrink: negative radius");
  return Box(lower.array() + radius, upper.array() - radius);
}

double Box::diameter() const { return (upper - lower).norm(); }

bool Box::contains_origin_in_interior() const {
  return (lower.array() < 0.0).all() && (upper.array() > 0.0).all();
}

}  // namespace kmpc
