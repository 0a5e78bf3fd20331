#include <doctest.h>

#include "kmpc/edmd.hpp"
#include "kmpc/matrix_exp.hpp"
#include "oracles.hpp"

#include <sstream>

using namespace kmpc;

namespace {

ObservableSpec mono(std::vector<int> e) { return MonomialObservable{std::move(e)}; }

struct LinearCase {
  MatrixXd A{2, 2};
  MatrixXd B{2, 1};
  LinearCase() {
    A << 0.0, 1.0, -1.5, -0.2;
    B << 0.3, 1.0;
  }
};

}  // namespace

TEST_CASE("sample_states is reproducible and nested in d") {
  const Box box = Box::symmetric(2, 2.0);
  const SampleSet a = sample_states(box, 100, 42);
  const SampleSet b = sample_states(box, 1000, 42);
  CHECK(a.points == b.points.leftCols(100));
  CHECK(a.points == sample_states(box, 100, 42).points);
  CHECK(a.points != sample_states(box, 100, 43).points);
  CHECK((b.points.array() >= -2.0).all());
  CHECK((b.points.array() < 2.0).all());
  // Sample mean of U(-2, 2) is near 0 for 1000 draws (sd ~ 0.037).
  CHECK(std::abs(b.points.row(0).mean()) < 0.2);
}

TEST_CASE("exact recovery on a linear system with the linear dictionary") {
  const LinearCase lc;
  const auto sys = linear_system(lc.A, lc.B);
  const Dictionary dict = build_monomial_dictionary(2, 1);
  // d = M = 3 points in general position already determine L.
  for (Index d : {3, 10, 500}) {
    const GeneratorEstimate gen = fit(dict, sys, sample_states(Box::symmetric(2, 1.0), d, 9));
    MatrixXd L0 = MatrixXd::Zero(3, 3);
    L0.bottomRightCorner(2, 2) = lc.A;
    MatrixXd Le = L0;
    Le.block(1, 0, 2, 1) = lc.B;
    CHECK((gen.L0 - L0).norm() <= 1e-8);
    CHECK((gen.Lei[0] - Le).norm() <= 1e-8);
  }
}

TEST_CASE("quadratic monomials are invariant under linear dynamics") {
  const LinearCase lc;
  const auto sys = linear_system(lc.A, lc.B);
  const Dictionary dict = build_monomial_dictionary(2, 2);
  const GeneratorEstimate gen = fit(dict, sys, sample_states(Box::symmetric(2, 1.0), 200, 4));
  IntegratorConfig tight;
  tight.rel_tol = 1e-12;
  tight.abs_tol = 1e-14;
  const BilinearSurrogate sur(gen, dict, 0.1);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const VectorXd x = oracle::uniform(rng, 2, -1, 1);
    const VectorXd u = oracle::uniform(rng, 1, -1, 1);
    CHECK((sur.step(x, u) - oracle::linear_zoh(lc.A, lc.B, x, u, 0.1)).norm() <= 1e-9);
  }
}

TEST_CASE("consistency: first column of L0 is exactly zero in both modes") {
  const auto sys = van_der_pol(0.1);
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const SampleSet s = sample_states(Box::symmetric(2, 2.0), 500, 1);
  for (auto mode : {ConsistencyMode::constrained, ConsistencyMode::zero_after_solve}) {
    LeastSquaresOptions opts;
    opts.consistency = mode;
    const GeneratorEstimate gen = fit(dict, sys, s, opts);
    CHECK(gen.consistency_enforced);
    CHECK(gen.L0.col(0).cwiseAbs().maxCoeff() == 0.0);
    // f_eps(0, 0) = 0
    const BilinearSurrogate sur(gen, dict, 0.05);
    CHECK(sur.step(VectorXd::Zero(2), VectorXd::Zero(1)).norm() <= 1e-12);
  }
}

TEST_CASE("estimate_generator: least squares normal equations hold") {
  std::mt19937_64 rng(2);
  MatrixXd X(4, 30), Y(4, 30);
  for (Index j = 0; j < 30; ++j) {
    X.col(j) = oracle::uniform(rng, 4, -1, 1);
    Y.col(j) = oracle::uniform(rng, 4, -1, 1);
  }
  const GeneratorSolve s = estimate_generator(X, Y, false);
  CHECK(s.rank == 4);
  CHECK_FALSE(s.rank_deficient());
  // (L X - Y) X^T = 0 at the minimizer
  CHECK(((s.L * X - Y) * X.transpose()).norm() <= 1e-12);

  // Rank deficiency: d < M
  const GeneratorSolve r = estimate_generator(X.leftCols(2), Y.leftCols(2), false);
  CHECK(r.rank_deficient());
  CHECK_FALSE(r.warnings.empty());

  // Ridge shrinks the estimate.
  LeastSquaresOptions ridge;
  ridge.ridge = 10.0;
  CHECK(estimate_generator(X, Y, false, ridge).L.norm() < s.L.norm());
}

TEST_CASE("control_generator is affine in u") {
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const GeneratorEstimate gen = fit(dict, van_der_pol(0.1), sample_states(Box::symmetric(2, 2.0), 300, 5));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> theta(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const VectorXd u1 = oracle::uniform(rng, 1, -5, 5);
    const VectorXd u2 = oracle::uniform(rng, 1, -5, 5);
    const double t = theta(rng);
    const MatrixXd lhs = control_generator(gen, t * u1 + (1 - t) * u2);
    const MatrixXd rhs = t * control_generator(gen, u1) + (1 - t) * control_generator(gen, u2);
    CHECK((lhs - rhs).norm() <= 1e-12 * std::max(1.0, lhs.norm()));
  }
  CHECK((control_generator(gen, VectorXd::Zero(1)) - gen.L0).norm() == 0.0);
  CHECK((control_generator(gen, VectorXd::Ones(1)) - gen.Lei[0]).norm() <= 1e-12 * gen.Lei[0].norm());
}

TEST_CASE("surrogate transition uses exp(dt L^u)") {
  const Dictionary dict = build_monomial_dictionary(2, 2);
  const GeneratorEstimate gen = fit(dict, van_der_pol(0.1), sample_states(Box::symmetric(2, 2.0), 300, 5));
  const BilinearSurrogate sur(gen, dict, 0.05);
  const VectorXd u = VectorXd::Constant(1, 1.7);
  const MatrixXd T = oracle::expm(0.05 * control_generator(gen, u));
  CHECK((sur.transition(u) - T).norm() <= 1e-12);
  const VectorXd x = (VectorXd(2) << 0.4, -0.9).finished();
  CHECK((sur.step(x, u) - (T * dict.eval(x)).segment(1, 2)).norm() <= 1e-12);
  CHECK((sur.step_with(sur.projected_transition(u), x) - sur.step(x, u)).norm() == 0.0);
}

TEST_CASE("samples where the dictionary is undefined are reported by index") {
  const auto sys = linear_system(MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1));
  const Box box(VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 1.0));
  const Dictionary dict = build_custom_dictionary(1, {mono({0}), mono({1}), ReciprocalExponential{0, 0.5}}, &box, true);
  try {
    fit(dict, sys, sample_states(box, 20000, 3));
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("samples [") != std::string::npos);
  }
}

TEST_CASE("open-loop prediction stops with a diagnostic when leaving the dictionary domain") {
  const auto sys = linear_system(MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1));
  const Box box(VectorXd::Constant(1, 0.0), VectorXd::Constant(1, 1.0));
  const Dictionary dict = build_custom_dictionary(1, {mono({0}), mono({1}), ReciprocalExponential{0, 0.5}}, &box);
  const BilinearSurrogate sur(fit(dict, sys, sample_states(box, 200, 1)), dict, 0.05);
  const std::vector<VectorXd> u(40, VectorXd::Constant(1, -1.0));
  const Trajectory t = predict_open_loop(sur, VectorXd::Zero(1), u);
  CHECK(t.truncated());
  CHECK(t.length() < 41);
  CHECK(t.length() >= 10);
  // x+ = x + dt u is reproduced exactly by the coordinate row.
  CHECK(t.states[5][0] == doctest::Approx(-0.25).epsilon(1e-10));
}

TEST_CASE("generator container round-trips and rejects corrupt input") {
  const Dictionary dict = build_monomial_dictionary(2, 3);
  const GeneratorEstimate gen = fit(dict, van_der_pol(0.1), sample_states(Box::symmetric(2, 2.0), 100, 5));
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_generator(ss, gen);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "KMPCGEN1");
  const GeneratorEstimate back = read_generator(ss);
  CHECK(back.M == 10);
  CHECK(back.d == 100);
  CHECK(back.dict_id == dict.id());
  CHECK(back.L0 == gen.L0);
  CHECK(back.Lei[0] == gen.Lei[0]);
  CHECK(back.consistency_enforced);

  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream is(bad, std::ios::binary);
  CHECK_THROWS(read_generator(is));
  std::istringstream cut(bytes.substr(0, bytes.size() - 8), std::ios::binary);
  CHECK_THROWS(read_generator(cut));
}
