#ifndef KMPC_EDMD_HPP
#define KMPC_EDMD_HPP

#include "kmpc/dictionary.hpp"
#include "kmpc/dynamics.hpp"
#include "kmpc/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kmpc {

/// d i.i.d. uniform samples from a state box, stored column-wise (n_x x d).
struct SampleSet {
  MatrixXd points;
  std::uint64_t seed = 0;
  Box domain;

  Index size() const { return points.cols(); }
};

/// Reproducible given the seed; the first k points for a seed are the same
/// for every d >= k.
SampleSet sample_states(const Box& domain, Index d, std::uint64_t seed);

/// Uniform [0, 1) from one 64-bit Mersenne Twister draw. Independent of the
/// standard library's distribution implementations.
double uniform01(std::uint64_t bits);

struct DataMatrices {
  MatrixXd X;  // column j = Psi(x_j)
  MatrixXd Y;  // column j = (L^u Psi)(x_j)
};

/// Throws DomainError listing the offending sample indices when the
/// dictionary is undefined at some samples.
DataMatrices assemble_data_matrices(const Dictionary& dict, const ControlAffineSystem& sys,
                                    const SampleSet& samples, const ConstVecRef& u);

enum class ConsistencyMode {
  /// Minimize |L X - Y|_F over matrices with a zero first column, i.e. drop
  /// the constant regressor.
  constrained,
  /// Solve unconstrained, then zero the first column.
  zero_after_solve,
};

struct LeastSquaresOptions {
  /// Singular values of X below cutoff * sigma_max are treated as zero.
  double singular_value_cutoff = 1e-12;
  /// Tikhonov weight; 0 gives the plain Frobenius minimizer.
  double ridge = 0.0;
  ConsistencyMode consistency = ConsistencyMode::constrained;
};

struct GeneratorSolve {
  MatrixXd L;
  Index rank = 0;
  Index regressors = 0;  // rows of X used in the solve
  std::vector<std::string> warnings;  // e.g. rank deficiency

  bool rank_deficient() const { return rank < regressors; }
};

/// argmin_L |L X - Y|_F^2 = Y X^+ (minimum-norm when X is rank deficient).
/// enforce_consistency forces a zero first column as selected in opts.
GeneratorSolve estimate_generator(const MatrixXd& X, const MatrixXd& Y, bool enforce_consistency,
                                  const LeastSquaresOptions& opts = {});

/// EDMD estimates of the generators for u = 0 and u = e_i.
struct GeneratorEstimate {
  MatrixXd L0;
  std::vector<MatrixXd> Lei;
  Index M = 0;
  Index d = 0;
  std::string dict_id;
  bool consistency_enforced = false;
  std::vector<std::string> warnings;

  Index n_c() const { return static_cast<Index>(Lei.size()); }
};

/// Fits L0 (consistency enforced) and one L^{e_i} per input on a shared
/// sample set.
GeneratorEstimate fit(const Dictionary& dict, const ControlAffineSystem& sys,
                      const SampleSet& samples, const LeastSquaresOptions& opts = {});

/// L^u = L0 + sum_i u_i (L^{e_i} - L0).
MatrixXd control_generator(const GeneratorEstimate& gen, const ConstVecRef& u);

/// Data-driven predictor f_eps(x, u) = P_x exp(dt L^u) Psi(x).
class BilinearSurrogate {
 public:
  BilinearSurrogate(GeneratorEstimate gen, Dictionary dict, double dt);

  const GeneratorEstimate& generator() const { return gen_; }
  const Dictionary& dictionary() const { return dict_; }
  const StateProjection& projection() const { return proj_; }
  double dt() const { return dt_; }
  Index n_x() const { return dict_.n_x(); }
  Index n_c() const { return gen_.n_c(); }

  /// exp(dt L^u).
  MatrixXd transition(const ConstVecRef& u) const;
  /// P_x exp(dt L^u), the n_x x M block that step() applies to Psi(x).
  MatrixXd projected_transition(const ConstVecRef& u) const;
  VectorXd step(const ConstVecRef& x, const ConstVecRef& u) const;
  /// step() with a precomputed projected_transition(u).
  VectorXd step_with(const MatrixXd& projected, const ConstVecRef& x) const;

 private:
  GeneratorEstimate gen_;
  Dictionary dict_;
  StateProjection proj_;
  double dt_;
};

VectorXd surrogate_step(const BilinearSurrogate& sur, const ConstVecRef& x, const ConstVecRef& u);

/// Iterates surrogate_step over the control sequence. Leaving the dictionary
/// domain ends the prediction early with a diagnostic.
Trajectory predict_open_loop(const BilinearSurrogate& sur, const ConstVecRef& x0,
                             const std::vector<VectorXd>& controls);

// Generator container: little-endian binary.
//   bytes 0..7   magic "KMPCGEN1"
//   u32 M, u32 n_c, u64 d, u32 consistency flag, u32 dict_id length, dict_id
//   (1 + n_c) matrices of M x M float64, row-major: L0, L^{e_1}, ...
void write_generator(std::ostream& os, const GeneratorEstimate& gen);
GeneratorEstimate read_generator(std::istream& is);
void save_generator(const std::string& path, const GeneratorEstimate& gen);
GeneratorEstimate load_generator(const std::string& path);

}  // namespace kmpc

#endif  // KMPC_EDMD_HPP
