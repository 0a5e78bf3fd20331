#include <doctest.h>

#include "kmpc/matrix_exp.hpp"
#include "oracles.hpp"

#include <limits>

using namespace kmpc;

TEST_CASE("matrix exponential agrees with Eigen's MatrixFunctions across norms") {
  std::mt19937_64 rng(101);
  for (int n : {1, 2, 7, 10}) {
    for (double scale : {1e-6, 0.01, 0.3, 1.0, 3.0, 20.0}) {
      MatrixXd A(n, n);
      for (Index i = 0; i < n; ++i) A.row(i) = oracle::uniform(rng, n, -1, 1).transpose();
      A *= scale;
      const MatrixXd ref = oracle::expm(A);
      const MatrixXd got = matrix_exponential(A);
      CHECK((got - ref).norm() <= 1e-12 * std::max(1.0, ref.norm()));
    }
  }
}

TEST_CASE("matrix exponential closed forms") {
  CHECK((matrix_exponential(MatrixXd::Zero(3, 3)) - MatrixXd::Identity(3, 3)).norm() == 0.0);
  // Rotation generator
  MatrixXd J(2, 2);
  J << 0, -1.3, 1.3, 0;
  MatrixXd R(2, 2);
  R << std::cos(1.3), -std::sin(1.3), std::sin(1.3), std::cos(1.3);
  CHECK((matrix_exponential(J) - R).norm() <= 1e-14);
  // Nilpotent: exp(N) = I + N + N^2 / 2
  MatrixXd N = MatrixXd::Zero(3, 3);
  N(0, 1) = 2.0;
  N(1, 2) = 3.0;
  CHECK((matrix_exponential(N) - (MatrixXd::Identity(3, 3) + N + 0.5 * N * N)).norm() <= 1e-14);
}

TEST_CASE("matrix exponential rejects bad input and reports overflow") {
  CHECK_THROWS_AS(matrix_exponential(MatrixXd::Zero(2, 3)), ContractViolation);
  MatrixXd nanm = MatrixXd::Zero(2, 2);
  nanm(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(matrix_exponential(nanm), ContractViolation);
  CHECK_THROWS_AS(matrix_exponential(MatrixXd::Constant(2, 2, 800.0)), Error);
}
