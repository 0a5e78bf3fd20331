#include <doctest.h>

#include "kmpc/dictionary.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace kmpc;

namespace {

ObservableSpec mono(std::vector<int> e) { return MonomialObservable{std::move(e)}; }

}  // namespace

TEST_CASE("monomial dictionary: size, order and names") {
  const Dictionary d = build_monomial_dictionary(2, 3);
  REQUIRE(d.size() == 10);
  const std::vector<std::string> names = {"1",     "x1",    "x2",    "x1^2",    "x1*x2",
                                          "x2^2",  "x1^3",  "x1^2*x2", "x1*x2^2", "x2^3"};
  for (Index k = 0; k < d.size(); ++k) CHECK(d.observable_name(k) == names[static_cast<std::size_t>(k)]);
  CHECK(d.conforming());
  CHECK(d.warnings().empty());
  // C(n + deg, deg) observables in general
  CHECK(build_monomial_dictionary(3, 4).size() == 35);
  CHECK_THROWS_AS(build_monomial_dictionary(2, 0), ContractViolation);
}

TEST_CASE("Psi(0) = e1 and the projection returns the state") {
  const Dictionary d = build_monomial_dictionary(2, 3);
  const VectorXd psi0 = d.eval(VectorXd::Zero(2));
  CHECK(psi0[0] == 1.0);
  CHECK(psi0.tail(9).norm() == 0.0);
  const StateProjection P(2);
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    const VectorXd x = oracle::uniform(rng, 2, -2, 2);
    CHECK((P.apply(d.eval(x)) - x).norm() == 0.0);
  }
}

TEST_CASE("gradients agree with central differences") {
  const Dictionary mono3 = build_monomial_dictionary(2, 3);
  const Dictionary custom = build_custom_dictionary(
      2, {mono({0, 0}), mono({1, 0}), mono({0, 1}), mono({2, 1}), ReciprocalExponential{0, 3.0},
          ReciprocalExponential{1, 2.5}});
  std::mt19937_64 rng(23);
  for (const Dictionary* d : {&mono3, &custom}) {
    for (int i = 0; i < 25; ++i) {
      const VectorXd x = oracle::uniform(rng, 2, -1.5, 1.5);
      const MatrixXd J = d->eval_gradient(x);
      const MatrixXd ref = oracle::fd_jacobian([&](const VectorXd& z) { return d->eval(z); }, x, 1e-6);
      CHECK((J - ref).cwiseAbs().maxCoeff() <= 1e-7 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("structure flags") {
  const Dictionary d = build_custom_dictionary(
      2, {mono({0, 0}), mono({1, 0}), mono({0, 1}), mono({1, 1}), mono({1, 0}), ReciprocalExponential{1, 2.0}});
  const auto& f = d.structure_flags();
  CHECK(f[0] == StructureFlag::constant);
  CHECK(f[1] == StructureFlag::coordinate);
  CHECK(f[2] == StructureFlag::coordinate);
  CHECK(f[3] == StructureFlag::higher_order);
  CHECK(f[4] == StructureFlag::nonconforming);  // linear again: gradient at 0 is nonzero
  CHECK(f[5] == StructureFlag::nonconforming);  // exp(1/(x2 + 2)) at 0 is e^0.5
  CHECK_FALSE(d.conforming());
  CHECK(d.warnings().size() == 2);
}

TEST_CASE("custom dictionaries must begin with the constant and the coordinates") {
  CHECK_THROWS_AS(build_custom_dictionary(2, {mono({0, 0}), mono({0, 1}), mono({1, 0})}), ContractViolation);
  CHECK_THROWS_AS(build_custom_dictionary(2, {mono({1, 0}), mono({1, 0}), mono({0, 1})}), ContractViolation);
  CHECK_THROWS_AS(build_custom_dictionary(2, {mono({0, 0}), mono({1, 0})}), ContractViolation);
  CHECK_THROWS_AS(build_custom_dictionary(2, {mono({0, 0}), mono({1, 0}), mono({0, 1}), mono({1, -1})}),
                  ContractViolation);
  CHECK_THROWS_AS(
      build_custom_dictionary(2, {mono({0, 0}), mono({1, 0}), mono({0, 1}), ReciprocalExponential{2, 0.0}}),
      ContractViolation);
}

TEST_CASE("reciprocal exponential poles inside the box need acknowledgement") {
  const Box box(VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 1.0));
  const std::vector<ObservableSpec> spec = {mono({0}), mono({1}), ReciprocalExponential{0, 0.5}};
  CHECK_THROWS_AS(build_custom_dictionary(1, spec, &box, false), ContractViolation);
  const Dictionary d = build_custom_dictionary(1, spec, &box, true);
  CHECK(d.acknowledges_singularity());
  CHECK_THROWS_AS(d.eval(VectorXd::Constant(1, -0.5)), DomainError);
  // Pole outside the box is fine.
  const std::vector<ObservableSpec> shifted = {mono({0}), mono({1}), ReciprocalExponential{0, 2.0}};
  CHECK_NOTHROW(build_custom_dictionary(1, shifted, &box, false));
}

TEST_CASE("dictionary ids round-trip") {
  const Dictionary a = build_monomial_dictionary(2, 3);
  CHECK(Dictionary::from_id(a.id()).id() == a.id());
  const Dictionary b = build_custom_dictionary(
      2, {mono({0, 0}), mono({1, 0}), mono({0, 1}), mono({0, 2}), ReciprocalExponential{1, 300.6287}});
  const Dictionary b2 = Dictionary::from_id(b.id());
  CHECK(b2.id() == b.id());
  const VectorXd x = (VectorXd(2) << 0.1, -3.0).finished();
  CHECK((b2.eval(x) - b.eval(x)).norm() == 0.0);
  CHECK_THROWS_AS(Dictionary::from_id("monomial(n_x=2"), ContractViolation);
}

TEST_CASE("generator action is the gradient times the vector field") {
  const Dictionary d = build_monomial_dictionary(2, 2);
  const auto sys = van_der_pol(0.1);
  const VectorXd x = (VectorXd(2) << 0.3, -1.1).finished();
  const VectorXd u = VectorXd::Constant(1, 0.7);
  const VectorXd Lpsi = generator_action(d, sys, x, u);
  // d/dt (x1 x2) = x2 * x2 + x1 * xdot2
  const VectorXd f = oracle::vdp_rhs(x, 0.1, 0.7);
  CHECK(Lpsi[4] == doctest::Approx(x[1] * f[0] + x[0] * f[1]).epsilon(1e-14));
  CHECK(Lpsi[0] == 0.0);
}
