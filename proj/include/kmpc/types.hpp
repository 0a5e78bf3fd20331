#ifndef KMPC_TYPES_HPP
#define KMPC_TYPES_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace kmpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using VecRef = Eigen::Ref<VectorXd>;
using ConstVecRef = Eigen::Ref<const VectorXd>;

// Error hierarchy. Contract violations are programmer errors (bad dimensions,
// broken invariants at construction); everything else is a runtime failure
// that callers may want to recover from.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An observable or model was evaluated outside its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double last_valid_time)
      : Error(what), last_valid_time_(last_valid_time) {}
  double last_valid_time() const noexcept { return last_valid_time_; }

 private:
  double last_valid_time_;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Axis-aligned box [lower, upper] in R^n.
struct Box {
  VectorXd lower;
  VectorXd upper;

  Box() = default;
  Box(VectorXd lo, VectorXd hi);

  static Box symmetric(Index n, double half_width);

  Index dim() const { return lower.size(); }
  bool empty() const;
  bool contains(const ConstVecRef& x, double tol = 0.0) const;
  /// Largest componentwise distance outside the box (0 when inside).
  double violation(const ConstVecRef& x) const;
  /// Squared Euclidean distance to the box.
  double squared_distance(const ConstVecRef& x) const;
  VectorXd project(const ConstVecRef& x) const;
  /// Pontryagin difference with the Euclidean ball B_radius(0).
  Box shrink(double radius) const;
  double diameter() const;
  bool contains_origin_in_interior() const;
};

}  // namespace kmpc

#endif  // KMPC_TYPES_HPP
