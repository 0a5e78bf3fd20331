#include "kmpc/edmd.hpp"

#include "kmpc/format.hpp"
#include "kmpc/matrix_exp.hpp"

#include <Eigen/SVD>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

namespace kmpc {

double uniform01(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

SampleSet sample_states(const Box& domain, Index d, std::uint64_t seed) {
  if (d < 1) throw ContractViolation("sample_states: d must be >= 1");
  if (domain.dim() < 1 || domain.empty()) {
    throw ContractViolation("sample_states: degenerate box (lower > upper)");
  }
  SampleSet s;
  s.seed = seed;
  s.domain = domain;
  s.points.resize(domain.dim(), d);
  std::mt19937_64 rng(seed);
  const VectorXd width = domain.upper - domain.lower;
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < domain.dim(); ++i) {
      const double r = uniform01(rng());
      // r < 1, so the point stays in the half-open box; clamp guards rounding.
      s.points(i, j) = std::min(domain.lower[i] + width[i] * r, domain.upper[i]);
    }
  }
  return s;
}

namespace {

std::string list_indices(const std::vector<Index>& idx) {
  std::string s;
  const std::size_t shown = std::min<std::size_t>(idx.size(), 20);
  for (std::size_t k = 0; k < shown; ++k) {
    if (k > 0) s += ", ";
    s += std::to_string(idx[k]);
  }
  if (idx.size() > shown) s += ", ... (" + std::to_string(idx.size()) + " total)";
  return s;
}

void check_dims(const Dictionary& dict, const ControlAffineSystem& sys, const SampleSet& samples) {
  if (dict.n_x() != sys.n_x() || samples.points.rows() != sys.n_x()) {
    throw ContractViolation("EDMD: dictionary, system and samples disagree on n_x");
  }
  if (samples.size() < 1) throw ContractViolation("EDMD: empty sample set");
}

}  // namespace

DataMatrices assemble_data_matrices(const Dictionary& dict, const ControlAffineSystem& sys,
                                    const SampleSet& samples, const ConstVecRef& u) {
  check_dims(dict, sys, samples);
  if (u.size() != sys.n_c()) throw ContractViolation("assemble_data_matrices: control dimension");
  const Index M = dict.size();
  const Index d = samples.size();
  DataMatrices out{MatrixXd(M, d), MatrixXd(M, d)};
  MatrixXd grad(M, sys.n_x());
  VectorXd field(sys.n_x());
  std::vector<Index> bad;
  std::string first_error;
  for (Index j = 0; j < d; ++j) {
    const auto x = samples.points.col(j);
    try {
      dict.eval(x, out.X.col(j));
      dict.eval_gradient(x, grad);
    } catch (const DomainError& e) {
      if (bad.empty()) first_error = e.what();
      bad.push_back(j);
      continue;
    }
    sys.vector_field(x, u, field);
    out.Y.col(j).noalias() = grad * field;
  }
  if (!bad.empty()) {
    throw DomainError("dictionary undefined at samples [" + list_indices(bad) + "]: " + first_error);
  }
  return out;
}

namespace {

GeneratorSolve solve_least_squares(const MatrixXd& X, const MatrixXd& Y, const LeastSquaresOptions& opts) {
  if (X.isZero(0.0)) throw EstimationError("estimate_generator: X is identically zero");
  const Index M = X.rows();
  // X^T = U S V^T, so pinv(X) = U S^-1 V^T and L = (Y U) S^-1 V^T.
  Eigen::JacobiSVD<MatrixXd, Eigen::ColPivHouseholderQRPreconditioner> svd(
      X.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cutoff = opts.singular_value_cutoff * s[0];
  VectorXd inv = VectorXd::Zero(s.size());
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i) {
    if (s[i] > cutoff) {
      ++rank;
      inv[i] = opts.ridge > 0.0 ? s[i] / (s[i] * s[i] + opts.ridge) : 1.0 / s[i];
    } else if (opts.ridge > 0.0) {
      inv[i] = s[i] / (s[i] * s[i] + opts.ridge);
    }
  }
  GeneratorSolve out;
  out.rank = rank;
  out.regressors = M;
  out.L = (Y * svd.matrixU()) * inv.asDiagonal() * svd.matrixV().transpose();
  if (rank < M) {
    out.warnings.push_back("data matrix has rank " + std::to_string(rank) + " < " +
                           std::to_string(M) + " regressors; returning the minimum-norm estimate");
  }
  return out;
}

}  // namespace

GeneratorSolve estimate_generator(const MatrixXd& X, const MatrixXd& Y, bool enforce_consistency,
                                  const LeastSquaresOptions& opts) {
  if (X.cols() < 1) throw ContractViolation("estimate_generator: need d >= 1");
  if (X.rows() != Y.rows() || X.cols() != Y.cols()) {
    throw ContractViolation("estimate_generator: X and Y shapes differ");
  }
  if (!X.allFinite() || !Y.allFinite()) {
    throw EstimationError("estimate_generator: non-finite data");
  }
  const Index M = X.rows();
  if (!enforce_consistency || M == 1) {
    GeneratorSolve out = solve_least_squares(X, Y, opts);
    if (enforce_consistency) out.L.col(0).setZero();
    return out;
  }
  if (opts.consistency == ConsistencyMode::zero_after_solve) {
    GeneratorSolve out = solve_least_squares(X, Y, opts);
    out.L.col(0).setZero();
    return out;
  }
  GeneratorSolve reduced = solve_least_squares(X.bottomRows(M - 1), Y, opts);
  GeneratorSolve out;
  out.L = MatrixXd::Zero(M, M);
  out.L.rightCols(M - 1) = reduced.L;
  out.rank = reduced.rank;
  out.regressors = reduced.regressors;
  out.warnings = std::move(reduced.warnings);
  return out;
}

GeneratorEstimate fit(const Dictionary& dict, const ControlAffineSystem& sys,
                      const SampleSet& samples, const LeastSquaresOptions& opts) {
  check_dims(dict, sys, samples);
  const Index M = dict.size();
  const Index d = samples.size();
  const Index nc = sys.n_c();

  // One pass: X, the drift data and the action along each input field,
  // grad Psi * g_i (the u = e_i data minus the drift data).
  MatrixXd X(M, d);
  MatrixXd Y0(M, d);
  std::vector<MatrixXd> Gi(static_cast<std::size_t>(nc), MatrixXd(M, d));
  MatrixXd grad(M, sys.n_x());
  VectorXd g0(sys.n_x()), gi(sys.n_x());
  std::vector<Index> bad;
  std::string first_error;
  for (Index j = 0; j < d; ++j) {
    const auto x = samples.points.col(j);
    try {
      dict.eval(x, X.col(j));
      dict.eval_gradient(x, grad);
    } catch (const DomainError& e) {
      if (bad.empty()) first_error = e.what();
      bad.push_back(j);
      continue;
    }
    sys.drift(x, g0);
    Y0.col(j).noalias() = grad * g0;
    for (Index i = 0; i < nc; ++i) {
      sys.input(i, x, gi);
      Gi[static_cast<std::size_t>(i)].col(j).noalias() = grad * gi;
    }
  }
  if (!bad.empty()) {
    throw DomainError("dictionary undefined at samples [" + list_indices(bad) + "]: " + first_error);
  }

  GeneratorEstimate gen;
  gen.M = M;
  gen.d = d;
  gen.dict_id = dict.id();
  gen.consistency_enforced = true;
  GeneratorSolve drift = estimate_generator(X, Y0, true, opts);
  gen.L0 = std::move(drift.L);
  gen.warnings = std::move(drift.warnings);
  for (Index i = 0; i < nc; ++i) {
    const MatrixXd& G = Gi[static_cast<std::size_t>(i)];
    if (opts.consistency == ConsistencyMode::zero_after_solve) {
      gen.Lei.push_back(estimate_generator(X, Y0 + G, false, opts).L);
    } else {
      // L^{e_i} = L0 + (fit of the input action). With an unconstrained L0
      // this equals the direct fit of the u = e_i data, since least squares
      // is linear in Y; with the constrained L0 it keeps L^{e_i} - L0 free of
      // the drift fit's constant-column correction.
      gen.Lei.push_back(gen.L0 + estimate_generator(X, G, false, opts).L);
    }
  }
  return gen;
}

MatrixXd control_generator(const GeneratorEstimate& gen, const ConstVecRef& u) {
  if (u.size() != gen.n_c()) throw ContractViolation("control_generator: control dimension");
  MatrixXd L = gen.L0;
  for (Index i = 0; i < gen.n_c(); ++i) {
    if (u[i] != 0.0) L += u[i] * (gen.Lei[static_cast<std::size_t>(i)] - gen.L0);
  }
  return L;
}

BilinearSurrogate::BilinearSurrogate(GeneratorEstimate gen, Dictionary dict, double dt)
    : gen_(std::move(gen)), dict_(std::move(dict)), proj_(dict_.n_x()), dt_(dt) {
  if (!(dt_ > 0.0)) throw ContractViolation("BilinearSurrogate: dt must be positive");
  if (gen_.M != dict_.size() || gen_.L0.rows() != dict_.size()) {
    throw ContractViolation("BilinearSurrogate: generator size does not match dictionary");
  }
  if (!gen_.dict_id.empty() && gen_.dict_id != dict_.id()) {
    throw ContractViolation("BilinearSurrogate: generator was fitted with dictionary '" +
                            gen_.dict_id + "', got '" + dict_.id() + "'");
  }
}

MatrixXd BilinearSurrogate::transition(const ConstVecRef& u) const {
  return matrix_exponential(dt_ * control_generator(gen_, u));
}

MatrixXd BilinearSurrogate::projected_transition(const ConstVecRef& u) const {
  return transition(u).middleRows(proj_.first_row, proj_.n_x);
}

VectorXd BilinearSurrogate::step(const ConstVecRef& x, const ConstVecRef& u) const {
  return step_with(projected_transition(u), x);
}

VectorXd BilinearSurrogate::step_with(const MatrixXd& projected, const ConstVecRef& x) const {
  if (x.size() != n_x()) throw ContractViolation("surrogate step: state dimension");
  return projected * dict_.eval(x);
}

VectorXd surrogate_step(const BilinearSurrogate& sur, const ConstVecRef& x, const ConstVecRef& u) {
  return sur.step(x, u);
}

Trajectory predict_open_loop(const BilinearSurrogate& sur, const ConstVecRef& x0,
                             const std::vector<VectorXd>& controls) {
  Trajectory traj;
  traj.dt = sur.dt();
  traj.states.push_back(x0);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    try {
      VectorXd next = sur.step(traj.states.back(), controls[k]);
      traj.controls.push_back(controls[k]);
      traj.states.push_back(std::move(next));
    } catch (const Error& e) {
      traj.diagnostic = "prediction stopped at step " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  return traj;
}

namespace {

constexpr std::array<char, 8> kMagic = {'K', 'M', 'P', 'C', 'G', 'E', 'N', '1'};

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    os.put(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
}

template <class T>
T get_le(std::istream& is) {
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw Error("generator container: truncated file");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

void put_matrix(std::ostream& os, const MatrixXd& A) {
  for (Index r = 0; r < A.rows(); ++r) {
    for (Index c = 0; c < A.cols(); ++c) put_le(os, std::bit_cast<std::uint64_t>(A(r, c)));
  }
}

MatrixXd get_matrix(std::istream& is, Index M) {
  MatrixXd A(M, M);
  for (Index r = 0; r < M; ++r) {
    for (Index c = 0; c < M; ++c) A(r, c) = std::bit_cast<double>(get_le<std::uint64_t>(is));
  }
  return A;
}

}  // namespace

void write_generator(std::ostream& os, const GeneratorEstimate& gen) {
  os.write(kMagic.data(), kMagic.size());
  put_le(os, static_cast<std::uint32_t>(gen.M));
  put_le(os, static_cast<std::uint32_t>(gen.n_c()));
  put_le(os, static_cast<std::uint64_t>(gen.d));
  put_le(os, static_cast<std::uint32_t>(gen.consistency_enforced ? 1 : 0));
  put_le(os, static_cast<std::uint32_t>(gen.dict_id.size()));
  os.write(gen.dict_id.data(), static_cast<std::streamsize>(gen.dict_id.size()));
  put_matrix(os, gen.L0);
  for (const auto& L : gen.Lei) put_matrix(os, L);
}

GeneratorEstimate read_generator(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw Error("generator container: bad magic");
  GeneratorEstimate gen;
  gen.M = get_le<std::uint32_t>(is);
  const auto nc = get_le<std::uint32_t>(is);
  gen.d = static_cast<Index>(get_le<std::uint64_t>(is));
  gen.consistency_enforced = get_le<std::uint32_t>(is) != 0;
  const auto len = get_le<std::uint32_t>(is);
  if (gen.M == 0 || gen.M > 100000 || nc > 10000 || len > (1u << 20)) {
    throw Error("generator container: implausible header");
  }
  gen.dict_id.resize(len);
  is.read(gen.dict_id.data(), len);
  if (!is) throw Error("generator container: truncated dictionary id");
  gen.L0 = get_matrix(is, gen.M);
  for (std::uint32_t i = 0; i < nc; ++i) gen.Lei.push_back(get_matrix(is, gen.M));
  return gen;
}

void save_generator(const std::string& path, const GeneratorEstimate& gen) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_generator(os, gen);
  if (!os) throw Error("failed writing '" + path + "'");
}

GeneratorEstimate load_generator(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open generator container '" + path + "'");
  return read_generator(is);
}

}  // namespace kmpc
