#include "kmpc/errbound.hpp"

#include "kmpc/format.hpp"
#include "kmpc/matrix_exp.hpp"
#include "kmpc/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

namespace kmpc {

namespace {

VectorXd uniform_in(const Box& box, std::mt19937_64& rng) {
  VectorXd x(box.dim());
  for (Index i = 0; i < box.dim(); ++i) {
    x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * uniform01(rng());
  }
  return x;
}

// Tensor grid with g points per axis, endpoints included.
MatrixXd tensor_grid(const Box& box, Index g) {
  const Index n = box.dim();
  Index total = 1;
  for (Index i = 0; i < n; ++i) total *= g;
  MatrixXd pts(n, total);
  for (Index j = 0; j < total; ++j) {
    Index r = j;
    for (Index i = 0; i < n; ++i) {
      const Index k = r % g;
      r /= g;
      const double t = g == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(g - 1);
      pts(i, j) = box.lower[i] + t * (box.upper[i] - box.lower[i]);
    }
  }
  return pts;
}

double spectral_norm(const MatrixXd& A) {
  // Largest singular value; the Gram matrix is small (n_x x n_x).
  if (A.cols() <= A.rows()) {
    const MatrixXd G = A.transpose() * A;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
  }
  return Eigen::JacobiSVD<MatrixXd>(A).singularValues()[0];
}

// Relative max residual of the span fit L X = Y, and the worst row.
std::pair<double, Index> span_residual(const MatrixXd& L, const MatrixXd& X, const MatrixXd& Y) {
  const MatrixXd R = L * X - Y;
  const double scale = std::max(1.0, Y.cwiseAbs().maxCoeff());
  Index row = 0, col = 0;
  const double worst = R.cwiseAbs().maxCoeff(&row, &col);
  return {worst / scale, row};
}

}  // namespace

std::string ReferenceCompression::provenance() const {
  if (mode.kind == ReferenceMode::Kind::analytic) {
    return "analytic (span residual " + format_double(residual) + ")";
  }
  return "high-d estimate (d_ref=" + std::to_string(mode.d_ref) +
         ", seed=" + std::to_string(mode.seed) + ")";
}

ReferenceCompression reference_compression(const Dictionary& dict, const ControlAffineSystem& sys,
                                           const Box& domain, const ReferenceMode& mode) {
  if (dict.n_x() != sys.n_x() || domain.dim() != sys.n_x()) {
    throw ContractViolation("reference_compression: dimension mismatch");
  }
  ReferenceCompression ref;
  ref.mode = mode;

  if (mode.kind == ReferenceMode::Kind::high_d) {
    if (mode.d_ref < dict.size()) {
      throw ContractViolation("reference_compression: d_ref must be at least M");
    }
    GeneratorEstimate gen = fit(dict, sys, sample_states(domain, mode.d_ref, mode.seed));
    ref.L0 = std::move(gen.L0);
    ref.Lei = std::move(gen.Lei);
    return ref;
  }

  // Dense grid with at least 40 M points (capped), plus 100 random checks.
  const Index n = sys.n_x();
  const double target = 40.0 * static_cast<double>(dict.size());
  Index g = std::max<Index>(4, static_cast<Index>(std::ceil(std::pow(target, 1.0 / n))));
  while (g > 4 && std::pow(static_cast<double>(g), static_cast<double>(n)) > 2e5) --g;
  SampleSet grid;
  grid.domain = domain;
  grid.points = tensor_grid(domain, g);
  const SampleSet check = sample_states(domain, 100, 0x5eedf00dULL);

  auto solve_for = [&](const VectorXd& u) {
    const DataMatrices D = assemble_data_matrices(dict, sys, grid, u);
    MatrixXd L = estimate_generator(D.X, D.Y, false).L;
    const DataMatrices C = assemble_data_matrices(dict, sys, check, u);
    const auto [r_grid, row_grid] = span_residual(L, D.X, D.Y);
    const auto [r_check, row_check] = span_residual(L, C.X, C.Y);
    const double r = std::max(r_grid, r_check);
    if (r > 1e-10) {
      const Index row = r_grid >= r_check ? row_grid : row_check;
      throw InvarianceViolation("dictionary span is not invariant under the generator: L " +
                                dict.observable_name(row) + " leaves the span (residual " +
                                format_double(r) + ")");
    }
    ref.residual = std::max(ref.residual, r);
    return L;
  };

  ref.L0 = solve_for(VectorXd::Zero(sys.n_c()));
  for (Index i = 0; i < sys.n_c(); ++i) ref.Lei.push_back(solve_for(VectorXd::Unit(sys.n_c(), i)));
  return ref;
}

MatrixXd reference_generator(const ReferenceCompression& ref, const ConstVecRef& u) {
  if (u.size() != ref.n_c()) throw ContractViolation("reference_generator: control dimension");
  MatrixXd L = ref.L0;
  for (Index i = 0; i < ref.n_c(); ++i) {
    if (u[i] != 0.0) L += u[i] * (ref.Lei[static_cast<std::size_t>(i)] - ref.L0);
  }
  return L;
}

OperatorErrorReport operator_error(const GeneratorEstimate& gen, const ReferenceCompression& ref,
                                   double dt, const std::vector<VectorXd>& u_grid) {
  if (gen.L0.rows() != ref.L0.rows() || gen.n_c() != ref.n_c()) {
    throw ContractViolation("operator_error: generator and reference have different shapes");
  }
  if (u_grid.empty()) throw ContractViolation("operator_error: empty control grid");
  OperatorErrorReport rep;
  rep.u_grid = u_grid;
  for (const auto& u : u_grid) {
    const MatrixXd diff = matrix_exponential(dt * reference_generator(ref, u)) -
                          matrix_exponential(dt * control_generator(gen, u));
    const double e = diff.isZero(0.0) ? 0.0 : spectral_norm(diff);
    rep.per_u.push_back(e);
    rep.max = std::max(rep.max, e);
  }
  return rep;
}

double reference_generator_norm(const ReferenceCompression& ref, const std::vector<VectorXd>& u_grid) {
  double m = 0.0;
  for (const auto& u : u_grid) m = std::max(m, spectral_norm(reference_generator(ref, u)));
  return m;
}

double bound_constant(double reference_norm, double dt, double operator_err) {
  return std::exp(dt * reference_norm) + operator_err + reference_norm;
}

double lipschitz_estimate(const Dictionary& dict, const Box& domain, Index n_pairs,
                          std::uint64_t seed) {
  if (!dict.conforming()) {
    throw CertificationRefused(
        "lipschitz_estimate: dictionary has nonconforming observables; no certificate");
  }
  if (n_pairs < 1) throw ContractViolation("lipschitz_estimate: n_pairs must be >= 1");
  if (domain.dim() != dict.n_x()) throw ContractViolation("lipschitz_estimate: domain dimension");

  MatrixXd J(dict.size(), dict.n_x());
  auto grad_norm = [&](const VectorXd& x) {
    dict.eval_gradient(x, J);
    return spectral_norm(J);
  };

  // Coordinate pattern search for a larger Jacobian norm, staying in the box.
  auto refine = [&](VectorXd x, double best) {
    VectorXd h = 0.1 * (domain.upper - domain.lower);
    for (int it = 0; it < 400 && h.maxCoeff() > 1e-9; ++it) {
      bool improved = false;
      for (Index i = 0; i < x.size() && !improved; ++i) {
        for (double sgn : {1.0, -1.0}) {
          VectorXd y = x;
          y[i] = std::clamp(y[i] + sgn * h[i], domain.lower[i], domain.upper[i]);
          const double v = grad_norm(y);
          if (v > best) {
            best = v;
            x = y;
            improved = true;
            break;
          }
        }
      }
      if (!improved) h *= 0.5;
    }
    return best;
  };

  std::mt19937_64 rng(seed);
  double pair_max = 0.0;
  double grad_record = -1.0;
  double refined = 0.0;
  for (Index p = 0; p < n_pairs; ++p) {
    const VectorXd x = uniform_in(domain, rng);
    const VectorXd y = uniform_in(domain, rng);
    const double dist = (x - y).norm();
    if (dist > 0.0) pair_max = std::max(pair_max, (dict.eval(x) - dict.eval(y)).norm() / dist);
    // Refining from every new record keeps the result nested in n_pairs.
    for (const VectorXd* z : {&x, &y}) {
      const double g = grad_norm(*z);
      if (g > grad_record) {
        grad_record = g;
        refined = std::max(refined, refine(*z, g));
      }
    }
  }
  return std::max(pair_max, refined);
}

std::vector<TestPoint> sample_test_points(const Box& state_box, const Box& control_box, Index n,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TestPoint> pts;
  pts.reserve(static_cast<std::size_t>(n));
  while (static_cast<Index>(pts.size()) < n) {
    TestPoint p{uniform_in(state_box, rng), uniform_in(control_box, rng)};
    if (p.x.isZero(0.0) && p.u.isZero(0.0)) continue;
    pts.push_back(std::move(p));
  }
  return pts;
}

RatioStats proportional_error_study(const BilinearSurrogate& sur, const SampledDataMap& plant,
                                    const std::vector<TestPoint>& points, double L_psi,
                                    double c_tilde) {
  if (std::abs(sur.dt() - plant.dt()) > 1e-15 * std::max(1.0, plant.dt())) {
    throw ContractViolation("proportional_error_study: surrogate and plant differ in dt");
  }
  if (points.empty()) throw ContractViolation("proportional_error_study: no test points");
  RatioStats st;
  st.ratios.reserve(points.size());
  double sum = 0.0;
  for (const auto& p : points) {
    const double denom = L_psi * p.x.norm() + plant.dt() * c_tilde * p.u.norm();
    if (!(denom > 0.0)) {
      throw ContractViolation("proportional_error_study: test point with zero denominator");
    }
    const double err = (plant.step(p.x, p.u) - sur.step(p.x, p.u)).norm();
    const double r = err / denom;
    st.ratios.push_back(r);
    st.max = std::max(st.max, r);
    sum += r;
  }
  st.mean = sum / static_cast<double>(points.size());
  return st;
}

double ErrorStudyReport::time_averaged_mean(std::size_t i) const {
  const auto& v = mean_err.at(i);
  double s = 0.0;
  for (double e : v) s += e;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

ErrorStudyReport open_loop_error_study(const ControlAffineSystem& sys, const Dictionary& dict,
                                       const OpenLoopStudyConfig& cfg) {
  if (cfg.d_grid.empty()) throw ContractViolation("open_loop_error_study: empty d grid");
  for (Index d : cfg.d_grid) {
    if (d < 1) throw ContractViolation("open_loop_error_study: d must be >= 1");
  }
  if (cfg.n_init < 1 || cfg.horizon < 0) {
    throw ContractViolation("open_loop_error_study: need n_init >= 1 and horizon >= 0");
  }
  if (cfg.state_box.dim() != sys.n_x() || cfg.control_box.dim() != sys.n_c()) {
    throw ContractViolation("open_loop_error_study: box dimensions");
  }
  const auto t_start = std::chrono::steady_clock::now();

  ErrorStudyReport rep;
  rep.d_grid = cfg.d_grid;
  rep.horizon = cfg.horizon;
  rep.n_init = cfg.n_init;
  rep.seed = cfg.seed;

  std::mt19937_64 control_rng(derive_seed(cfg.seed, 0));
  for (Index k = 0; k < cfg.horizon; ++k) rep.controls.push_back(uniform_in(cfg.control_box, control_rng));
  std::mt19937_64 init_rng(derive_seed(cfg.seed, 1));
  std::vector<VectorXd> inits;
  for (Index i = 0; i < cfg.n_init; ++i) inits.push_back(uniform_in(cfg.state_box, init_rng));
  const std::uint64_t sample_seed = derive_seed(cfg.seed, 2);

  // Plant trajectories do not depend on d.
  const SampledDataMap plant(sys, cfg.dt, cfg.integrator);
  const auto n_init = static_cast<std::size_t>(cfg.n_init);
  const auto H = static_cast<std::size_t>(cfg.horizon);
  std::vector<std::vector<VectorXd>> truth(n_init);
  parallel_for(n_init, cfg.jobs, [&](std::size_t i) {
    truth[i].push_back(inits[i]);
    for (std::size_t k = 0; k < H; ++k) truth[i].push_back(plant.step(truth[i].back(), rep.controls[k]));
  });

  const std::size_t nd = cfg.d_grid.size();
  rep.mean_err.assign(nd, std::vector<double>(H + 1, 0.0));
  rep.max_err.assign(nd, std::vector<double>(H + 1, 0.0));
  const double inf = std::numeric_limits<double>::infinity();
  parallel_for(nd, cfg.jobs, [&](std::size_t di) {
    const GeneratorEstimate gen = fit(dict, sys, sample_states(cfg.state_box, cfg.d_grid[di], sample_seed));
    // The control sequence is shared by all initial states, so each step's
    // projected transition is computed once.
    std::vector<MatrixXd> P;
    P.reserve(H);
    bool overflow = false;
    for (std::size_t k = 0; k < H && !overflow; ++k) {
      try {
        P.push_back(matrix_exponential(cfg.dt * control_generator(gen, rep.controls[k])).middleRows(1, sys.n_x()));
      } catch (const Error&) {
        overflow = true;
      }
    }
    auto& mean = rep.mean_err[di];
    auto& mx = rep.max_err[di];
    for (std::size_t i = 0; i < n_init; ++i) {
      VectorXd x = inits[i];
      bool lost = false;
      for (std::size_t k = 1; k <= H; ++k) {
        if (!lost) {
          try {
            if (k - 1 >= P.size()) throw DomainError("transition overflow");
            x = P[k - 1] * dict.eval(x);
            lost = !x.allFinite();
          } catch (const DomainError&) {
            lost = true;
          }
        }
        const double e = lost ? inf : (x - truth[i][k]).norm();
        mean[k] += e;
        mx[k] = std::max(mx[k], e);
      }
    }
    for (double& m : mean) m /= static_cast<double>(n_init);
  });

  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

void write_openloop_csv(std::ostream& os, const ErrorStudyReport& report) {
  os << "d,k,mean_err,max_err\n";
  for (std::size_t di = 0; di < report.d_grid.size(); ++di) {
    for (std::size_t k = 0; k < report.mean_err[di].size(); ++k) {
      os << report.d_grid[di] << ',' << k << ',' << format_double(report.mean_err[di][k]) << ','
         << format_double(report.max_err[di][k]) << '\n';
    }
  }
}

}  // namespace kmpc
