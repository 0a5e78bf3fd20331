#ifndef KMPC_DICTIONARY_HPP
#define KMPC_DICTIONARY_HPP

#include "kmpc/dynamics.hpp"
#include "kmpc/types.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace kmpc {

/// prod_j x_j^{exponents[j]}
struct MonomialObservable {
  std::vector<int> exponents;
  int degree() const;
};

/// exp(1 / (x_index + offset)). `index` is zero-based.
struct ReciprocalExponential {
  Index index = 0;
  double offset = 0.0;
};

using ObservableSpec = std::variant<MonomialObservable, ReciprocalExponential>;

enum class StructureFlag { constant, coordinate, higher_order, nonconforming };

std::string to_string(StructureFlag f);

/// Observable dictionary Psi = (1, x_1, ..., x_n, psi_{n+2}, ..., psi_M).
///
/// The first n_x + 1 observables are always the constant and the coordinates.
/// Higher-order observables are flagged `higher_order` when psi(0) = 0 and
/// grad psi(0) = 0 hold, and `nonconforming` otherwise; nonconforming entries
/// are accepted but recorded in warnings().
class Dictionary {
 public:
  Index size() const { return static_cast<Index>(observables_.size()); }
  Index n_x() const { return n_x_; }

  const std::vector<ObservableSpec>& observables() const { return observables_; }
  const std::vector<StructureFlag>& structure_flags() const { return flags_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool conforming() const;
  bool acknowledges_singularity() const { return acknowledge_singularity_; }

  std::optional<double> lipschitz_bound() const { return lipschitz_bound_; }
  Dictionary with_lipschitz_bound(double bound) const;

  /// Canonical text form, parseable by from_id().
  std::string id() const;
  static Dictionary from_id(const std::string& id);

  std::string observable_name(Index k) const;

  /// Psi(x). Throws DomainError naming the observable when one is undefined at x.
  VectorXd eval(const ConstVecRef& x) const;
  void eval(const ConstVecRef& x, VecRef out) const;

  /// M x n_x matrix whose k-th row is grad psi_k(x).
  MatrixXd eval_gradient(const ConstVecRef& x) const;
  void eval_gradient(const ConstVecRef& x, Eigen::Ref<MatrixXd> out) const;

 private:
  friend Dictionary build_monomial_dictionary(Index n_x, int max_degree);
  friend Dictionary build_custom_dictionary(Index n_x, std::vector<ObservableSpec> spec,
                                            const Box* domain, bool acknowledge_singularity);

  Dictionary() = default;
  void classify();

  Index n_x_ = 0;
  int max_power_ = 0;
  std::vector<ObservableSpec> observables_;
  std::vector<StructureFlag> flags_;
  std::vector<std::string> warnings_;
  std::optional<double> lipschitz_bound_;
  bool monomial_family_ = false;
  int monomial_degree_ = 0;
  bool acknowledge_singularity_ = false;
};

/// All n_x-variate monomials of total degree <= max_degree, graded
/// lexicographic order: 1, x1, x2, x1^2, x1 x2, x2^2, ...
Dictionary build_monomial_dictionary(Index n_x, int max_degree);

/// Dictionary from an explicit list that must begin with the constant and the
/// n_x coordinate monomials. When `domain` is given, a reciprocal exponential
/// whose pole x_i = -offset lies inside the box is rejected unless
/// `acknowledge_singularity` is set.
Dictionary build_custom_dictionary(Index n_x, std::vector<ObservableSpec> spec,
                                   const Box* domain = nullptr,
                                   bool acknowledge_singularity = false);

/// P_x: selects the coordinate rows 1..n_x (zero-based) of a lifted vector.
struct StateProjection {
  Index first_row = 1;
  Index n_x = 0;

  explicit StateProjection(Index n) : n_x(n) {}
  VectorXd apply(const ConstVecRef& lifted) const { return lifted.segment(first_row, n_x); }
};

/// (L^u Psi)(x): component k is grad psi_k(x)^T (g0(x) + sum_i u_i g_i(x)).
VectorXd generator_action(const Dictionary& dict, const ControlAffineSystem& sys,
                          const ConstVecRef& x, const ConstVecRef& u);

}  // namespace kmpc

#endif  // KMPC_DICTIONARY_HPP
