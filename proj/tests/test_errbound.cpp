#include <doctest.h>

#include "kmpc/errbound.hpp"
#include "kmpc/parallel.hpp"
#include "oracles.hpp"

#include <cmath>
#include <sstream>

using namespace kmpc;

namespace {

const std::vector<VectorXd> kUGrid = {VectorXd::Constant(1, -5.0), VectorXd::Constant(1, 0.0),
                                      VectorXd::Constant(1, 2.5)};

}  // namespace

TEST_CASE("analytic reference on an invariant dictionary and exact transfer through exp") {
  MatrixXd A(2, 2), B(2, 1);
  A << 0.0, 1.0, -1.0, -0.4;
  B << 0.0, 1.0;
  const auto sys = linear_system(A, B);
  const Dictionary dict = build_monomial_dictionary(2, 2);
  const Box box = Box::symmetric(2, 1.0);
  const ReferenceCompression ref = reference_compression(dict, sys, box, ReferenceMode::analytic());
  CHECK(ref.residual <= 1e-10);
  CHECK(ref.provenance().find("analytic") == 0);
  for (Index d : {6, 50, 1000}) {
    const GeneratorEstimate gen = fit(dict, sys, sample_states(box, d, 12));
    CHECK(operator_error(gen, ref, 0.1, kUGrid).max <= 1e-9);
  }
}

TEST_CASE("analytic reference refuses a non-invariant dictionary") {
  const Dictionary dict = build_monomial_dictionary(2, 3);
  CHECK_THROWS_AS(reference_compression(dict, van_der_pol(0.1), Box::symmetric(2, 2.0), ReferenceMode::analytic()),
                  InvarianceViolation);
}

TEST_CASE("operator error against a reference from the same fit is exactly zero") {
  const auto sys = van_der_pol(0.1);
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const Box box = Box::symmetric(2, 2.0);
  const ReferenceCompression ref = reference_compression(dict, sys, box, ReferenceMode::high_d(400, 77));
  const GeneratorEstimate gen = fit(dict, sys, sample_states(box, 400, 77));
  const OperatorErrorReport rep = operator_error(gen, ref, 0.05, kUGrid);
  CHECK(rep.max == 0.0);
  CHECK(rep.per_u.size() == kUGrid.size());
  CHECK(ref.provenance().find("high-d") == 0);
}

TEST_CASE("operator error is nonincreasing in d on van der Pol") {
  const auto sys = van_der_pol(0.1);
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const Box box = Box::symmetric(2, 2.0);
  const ReferenceCompression ref = reference_compression(dict, sys, box, ReferenceMode::high_d(100000, 31));
  double prev = std::numeric_limits<double>::infinity();
  for (Index d : {100, 1000, 10000}) {
    const double e = operator_error(fit(dict, sys, sample_states(box, d, 5)), ref, 0.05, kUGrid).max;
    CHECK(e <= prev);
    prev = e;
  }
}

TEST_CASE("bound constant formula") {
  CHECK(bound_constant(2.0, 0.05, 1e-3) == doctest::Approx(std::exp(0.1) + 1e-3 + 2.0).epsilon(1e-15));
  CHECK(bound_constant(0.0, 0.05, 0.0) == 1.0);
}

TEST_CASE("Lipschitz estimate: identity lifting is exactly 1") {
  const Dictionary id = build_monomial_dictionary(3, 1);
  CHECK(std::abs(lipschitz_estimate(id, Box::symmetric(3, 5.0), 200, 1) - 1.0) <= 1e-12);
}

TEST_CASE("Lipschitz estimate matches a grid search of the Jacobian norm and is nested") {
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const Box box = Box::symmetric(2, 2.0);
  // Grid search of |grad Psi|_2 with an independent Jacobian (central differences).
  double grid_max = 0.0;
  const int g = 81;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const VectorXd x = (VectorXd(2) << -2.0 + 4.0 * i / (g - 1), -2.0 + 4.0 * j / (g - 1)).finished();
      const MatrixXd J = oracle::fd_jacobian([&](const VectorXd& z) { return dict.eval(z); }, x, 1e-5);
      grid_max = std::max(grid_max, Eigen::JacobiSVD<MatrixXd>(J).singularValues()[0]);
    }
  }
  const double small = lipschitz_estimate(dict, box, 50, 9);
  const double large = lipschitz_estimate(dict, box, 2000, 9);
  CHECK(small <= large);
  CHECK(large == doctest::Approx(grid_max).epsilon(1e-6));
}

TEST_CASE("Lipschitz certification is refused for nonconforming dictionaries") {
  const Dictionary d = build_custom_dictionary(
      1, {MonomialObservable{{0}}, MonomialObservable{{1}}, ReciprocalExponential{0, 3.0}});
  CHECK_THROWS_AS(lipschitz_estimate(d, Box::symmetric(1, 1.0), 10, 1), CertificationRefused);
}

TEST_CASE("proportional ratios are finite near the origin") {
  const auto sys = van_der_pol(0.1);
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const Box box = Box::symmetric(2, 2.0);
  const SampledDataMap plant(sys, 0.05);
  const BilinearSurrogate sur(fit(dict, sys, sample_states(box, 1000, 2)), dict, 0.05);
  std::vector<TestPoint> pts = sample_test_points(box, Box::symmetric(1, 5.0), 100, 4);
  for (double s : {1e-3, 1e-6, 1e-9}) {
    pts.push_back({VectorXd::Constant(2, s), VectorXd::Constant(1, s)});
    pts.push_back({VectorXd::Constant(2, s), VectorXd::Zero(1)});
    pts.push_back({VectorXd::Zero(2), VectorXd::Constant(1, s)});
  }
  const RatioStats st = proportional_error_study(sur, plant, pts, 10.0, 5.0);
  CHECK(st.ratios.size() == pts.size());
  for (double r : st.ratios) CHECK(std::isfinite(r));
  CHECK(st.max < 1.0);
  CHECK(st.mean <= st.max);
}

TEST_CASE("test points never include the origin pair") {
  const auto pts = sample_test_points(Box::symmetric(2, 1.0), Box::symmetric(1, 1.0), 300, 1);
  CHECK(pts.size() == 300);
  for (const auto& p : pts) CHECK((p.x.norm() + p.u.norm()) > 0.0);
}

TEST_CASE("open-loop error study: shape, determinism and independence from jobs") {
  OpenLoopStudyConfig cfg;
  cfg.state_box = Box::symmetric(2, 2.0);
  cfg.control_box = Box::symmetric(1, 5.0);
  cfg.dt = 0.05;
  cfg.d_grid = {20, 200};
  cfg.n_init = 10;
  cfg.horizon = 15;
  cfg.seed = 8;
  const auto sys = van_der_pol(0.1);
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const ErrorStudyReport a = open_loop_error_study(sys, dict, cfg);
  cfg.jobs = 2;
  const ErrorStudyReport b = open_loop_error_study(sys, dict, cfg);
  REQUIRE(a.mean_err.size() == 2);
  CHECK(a.mean_err[0].size() == 16);
  CHECK(a.mean_err[0][0] == 0.0);  // both start at x0
  CHECK(a.mean_err == b.mean_err);
  CHECK(a.max_err == b.max_err);
  CHECK(a.controls.size() == 15);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < a.mean_err[i].size(); ++k) CHECK(a.mean_err[i][k] <= a.max_err[i][k]);
  }

  std::ostringstream os1, os2;
  write_openloop_csv(os1, a);
  write_openloop_csv(os2, b);
  CHECK(os1.str() == os2.str());
  CHECK(os1.str().rfind("d,k,mean_err,max_err\n", 0) == 0);

  cfg.d_grid = {20};
  const ErrorStudyReport single = open_loop_error_study(sys, dict, cfg);
  CHECK(single.mean_err[0] == a.mean_err[0]);  // nested samples, same control sequence
}

TEST_CASE("derived seeds are distinct per stream and stable") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  std::vector<int> hits(37, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw Error("boom");
                  }),
                  Error);
}
