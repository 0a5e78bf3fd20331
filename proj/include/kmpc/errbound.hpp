#ifndef KMPC_ERRBOUND_HPP
#define KMPC_ERRBOUND_HPP

#include "kmpc/dictionary.hpp"
#include "kmpc/dynamics.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kmpc {

/// The dictionary span is not invariant under the generator action.
class InvarianceViolation : public Error {
 public:
  using Error::Error;
};

/// Lipschitz certification was requested for a nonconforming dictionary.
class CertificationRefused : public Error {
 public:
  using Error::Error;
};

struct ReferenceMode {
  enum class Kind { analytic, high_d };
  Kind kind = Kind::analytic;
  Index d_ref = 0;
  std::uint64_t seed = 0;

  static ReferenceMode analytic() { return {}; }
  static ReferenceMode high_d(Index d_ref, std::uint64_t seed) { return {Kind::high_d, d_ref, seed}; }
};

/// Comparison generator on the dictionary span, either exact (invariant
/// dictionaries) or a large-sample EDMD fit.
struct ReferenceCompression {
  MatrixXd L0;
  std::vector<MatrixXd> Lei;
  ReferenceMode mode;
  double residual = 0.0;  // analytic mode: max relative residual of the span fit

  Index n_c() const { return static_cast<Index>(Lei.size()); }
  std::string provenance() const;
};

/// Analytic mode fits the coefficients of L psi_k in the dictionary basis on
/// a dense grid over `domain` and checks the fit on 100 random points; a
/// residual above 1e-10 throws InvarianceViolation.
ReferenceCompression reference_compression(const Dictionary& dict, const ControlAffineSystem& sys,
                                           const Box& domain, const ReferenceMode& mode);

MatrixXd reference_generator(const ReferenceCompression& ref, const ConstVecRef& u);

struct OperatorErrorReport {
  std::vector<VectorXd> u_grid;
  std::vector<double> per_u;  // |exp(dt L_ref^u) - exp(dt L_d^u)|_2
  double max = 0.0;
};

OperatorErrorReport operator_error(const GeneratorEstimate& gen, const ReferenceCompression& ref,
                                   double dt, const std::vector<VectorXd>& u_grid);

/// Largest spectral norm of the reference generator over the grid.
double reference_generator_norm(const ReferenceCompression& ref, const std::vector<VectorXd>& u_grid);

/// exp(dt |L_ref|) + eps0 + |L_ref|, with |L_ref| from reference_generator_norm
/// and eps0 the measured operator error. A proxy: both constituents of the
/// constant are not observable directly.
double bound_constant(double reference_norm, double dt, double operator_err);

/// max(pairwise difference quotients, locally refined max spectral norm of
/// the dictionary Jacobian) over samples from `domain`. Pairs for a given seed
/// are nested, so the estimate is nondecreasing in n_pairs.
double lipschitz_estimate(const Dictionary& dict, const Box& domain, Index n_pairs,
                          std::uint64_t seed);

struct TestPoint {
  VectorXd x;
  VectorXd u;
};

/// Uniform (x, u) pairs from the boxes; never returns (0, 0).
std::vector<TestPoint> sample_test_points(const Box& state_box, const Box& control_box, Index n,
                                          std::uint64_t seed);

struct RatioStats {
  std::vector<double> ratios;
  double max = 0.0;
  double mean = 0.0;
};

/// |f(x,u) - f_eps(x,u)| / (L_psi |x| + dt c_tilde |u|) at each test point.
RatioStats proportional_error_study(const BilinearSurrogate& sur, const SampledDataMap& plant,
                                    const std::vector<TestPoint>& points, double L_psi,
                                    double c_tilde);

struct OpenLoopStudyConfig {
  Box state_box;
  Box control_box;
  double dt = 0.0;
  IntegratorConfig integrator;
  std::vector<Index> d_grid;
  Index n_init = 0;
  Index horizon = 0;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct ErrorStudyReport {
  std::vector<Index> d_grid;
  Index horizon = 0;
  Index n_init = 0;
  std::uint64_t seed = 0;
  std::vector<VectorXd> controls;                // the fixed control sequence
  std::vector<std::vector<double>> mean_err;     // [d index][k], k = 0..horizon
  std::vector<std::vector<double>> max_err;
  double runtime_seconds = 0.0;

  /// Mean over k of mean_err[i].
  double time_averaged_mean(std::size_t i) const;
};

/// For each d: fit on sample_states(state_box, d, seed) (nested samples),
/// then average |x_u(k; x0) - x_u^eps(k; x0)| over n_init uniform initial
/// states under one control sequence drawn from the control box.
ErrorStudyReport open_loop_error_study(const ControlAffineSystem& sys, const Dictionary& dict,
                                       const OpenLoopStudyConfig& cfg);

/// Columns d,k,mean_err,max_err.
void write_openloop_csv(std::ostream& os, const ErrorStudyReport& report);

}  // namespace kmpc

#endif  // KMPC_ERRBOUND_HPP
