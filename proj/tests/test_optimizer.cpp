#include <doctest.h>

#include "kmpc/optimizer.hpp"
#include "oracles.hpp"

#include <limits>

using namespace kmpc;

namespace {

Gradient exact(std::function<VectorXd(const VectorXd&)> g) {
  return [g](const VectorXd& z, double, VectorXd& out) { out = g(z); };
}

}  // namespace

TEST_CASE("bound-constrained convex quadratic: solution is the projected minimizer") {
  // f = 0.5 z^T H z - b^T z with diagonal H: the box solution is the clipped
  // unconstrained minimizer.
  const VectorXd h = (VectorXd(4) << 1.0, 4.0, 0.5, 2.0).finished();
  const VectorXd b = (VectorXd(4) << 3.0, -8.0, 0.1, 1.0).finished();
  const VectorXd lo = VectorXd::Constant(4, -1.0), hi = VectorXd::Constant(4, 1.0);
  const Objective f = [&](const VectorXd& z) { return 0.5 * z.dot(h.cwiseProduct(z)) - b.dot(z); };
  const auto r = projected_bfgs(f, exact([&](const VectorXd& z) { return VectorXd(h.cwiseProduct(z) - b); }), lo, hi,
                                VectorXd::Zero(4));
  const VectorXd expect = b.cwiseQuotient(h).cwiseMax(lo).cwiseMin(hi);
  CHECK(r.converged());
  CHECK((r.z - expect).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("coupled quadratic agrees with a grid search") {
  MatrixXd H(2, 2);
  H << 2.0, 0.9, 0.9, 1.0;
  const VectorXd b = (VectorXd(2) << 4.0, -3.0).finished();
  const VectorXd lo = (VectorXd(2) << -0.5, -2.0).finished(), hi = (VectorXd(2) << 1.0, 0.0).finished();
  const Objective f = [&](const VectorXd& z) { return 0.5 * z.dot(H * z) - b.dot(z); };
  const auto r = projected_bfgs(f, exact([&](const VectorXd& z) { return VectorXd(H * z - b); }), lo, hi,
                                VectorXd::Zero(2));
  double best = std::numeric_limits<double>::infinity();
  VectorXd arg(2);
  for (int i = 0; i <= 1500; ++i) {
    for (int j = 0; j <= 2000; ++j) {
      const VectorXd z = (VectorXd(2) << -0.5 + 1.5 * i / 1500.0, -2.0 + 2.0 * j / 2000.0).finished();
      const double v = f(z);
      if (v < best) {
        best = v;
        arg = z;
      }
    }
  }
  CHECK(r.f <= best + 1e-12);
  CHECK((r.z - arg).norm() <= 2e-3);
}

TEST_CASE("Rosenbrock with an inactive box converges to (1, 1)") {
  const Objective f = [](const VectorXd& z) {
    return 100.0 * std::pow(z[1] - z[0] * z[0], 2) + std::pow(1.0 - z[0], 2);
  };
  const auto g = exact([](const VectorXd& z) {
    VectorXd d(2);
    d << -400.0 * z[0] * (z[1] - z[0] * z[0]) - 2.0 * (1.0 - z[0]), 200.0 * (z[1] - z[0] * z[0]);
    return d;
  });
  ProjectedBfgsOptions opts;
  opts.max_iterations = 500;
  const auto r = projected_bfgs(f, g, VectorXd::Constant(2, -5.0), VectorXd::Constant(2, 5.0),
                                (VectorXd(2) << -1.2, 1.0).finished(), opts);
  CHECK(r.converged());
  CHECK((r.z - VectorXd::Ones(2)).norm() <= 1e-6);
}

TEST_CASE("iterates stay in the box and the start is projected") {
  const VectorXd lo = VectorXd::Zero(3), hi = VectorXd::Ones(3);
  bool outside = false;
  const Objective f = [&](const VectorXd& z) {
    if ((z.array() < lo.array()).any() || (z.array() > hi.array()).any()) outside = true;
    return (z - VectorXd::Constant(3, 2.0)).squaredNorm();
  };
  const auto r = projected_bfgs(f, exact([](const VectorXd& z) { return VectorXd(2.0 * (z - VectorXd::Constant(3, 2.0))); }),
                                lo, hi, VectorXd::Constant(3, -4.0));
  CHECK_FALSE(outside);
  CHECK(r.z == hi);
  CHECK(r.reason == StopReason::gradient);
}

TEST_CASE("non-finite start is reported") {
  const Objective f = [](const VectorXd&) { return std::numeric_limits<double>::infinity(); };
  const auto r = projected_bfgs(f, exact([](const VectorXd& z) { return VectorXd(z); }), VectorXd::Constant(1, -1.0),
                                VectorXd::Constant(1, 1.0), VectorXd::Zero(1));
  CHECK(r.reason == StopReason::nonfinite_start);
  CHECK_FALSE(r.converged());
  CHECK(to_string(r.reason) == "nonfinite_start");
}

TEST_CASE("inconsistent bounds are a contract violation") {
  const Objective f = [](const VectorXd& z) { return z.squaredNorm(); };
  CHECK_THROWS_AS(projected_bfgs(f, exact([](const VectorXd& z) { return VectorXd(2 * z); }), VectorXd::Ones(2),
                                 VectorXd::Zero(2), VectorXd::Zero(2)),
                  ContractViolation);
}
