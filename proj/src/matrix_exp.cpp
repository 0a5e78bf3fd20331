#include "kmpc/matrix_exp.hpp"

#include "kmpc/format.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace kmpc {

namespace {

constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                          25200.0,    1512.0,    56.0,      1.0};
constexpr std::array<double, 10> kPade9 = {17643225600.0, 8821612800.0, 2075673600.0,
                                           302702400.0,   30270240.0,   2162160.0,
                                           110880.0,      3960.0,       90.0,
                                           1.0};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

// Largest 1-norms for which the degree-m approximant meets unit roundoff.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <std::size_t N>
MatrixXd pade_low(const MatrixXd& A, const std::array<double, N>& b) {
  const Index n = A.rows();
  const MatrixXd A2 = A * A;
  MatrixXd odd = MatrixXd::Zero(n, n);
  MatrixXd even = MatrixXd::Zero(n, n);
  MatrixXd power = MatrixXd::Identity(n, n);
  for (std::size_t k = 0; 2 * k + 1 < N; ++k) {
    even += b[2 * k] * power;
    odd += b[2 * k + 1] * power;
    if (2 * k + 3 < N) power = power * A2;
  }
  const MatrixXd U = A * odd;
  return (even - U).partialPivLu().solve(even + U);
}

MatrixXd pade13_scaled(const MatrixXd& A) {
  const Index n = A.rows();
  const auto& b = kPade13;
  const MatrixXd I = MatrixXd::Identity(n, n);
  const MatrixXd A2 = A * A;
  const MatrixXd A4 = A2 * A2;
  const MatrixXd A6 = A4 * A2;
  const MatrixXd inner_u = A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2);
  const MatrixXd U = A * (inner_u + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
  const MatrixXd V =
      A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
  return (V - U).partialPivLu().solve(V + U);
}

}  // namespace

MatrixXd matrix_exponential(const MatrixXd& A) {
  if (A.rows() != A.cols()) throw ContractViolation("matrix_exponential: matrix must be square");
  if (!A.allFinite()) throw ContractViolation("matrix_exponential: non-finite entries");
  const Index n = A.rows();
  if (n == 0) return A;

  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  MatrixXd result;
  if (norm1 <= kTheta3) {
    result = pade_low(A, kPade3);
  } else if (norm1 <= kTheta5) {
    result = pade_low(A, kPade5);
  } else if (norm1 <= kTheta7) {
    result = pade_low(A, kPade7);
  } else if (norm1 <= kTheta9) {
    result = pade_low(A, kPade9);
  } else {
    const int s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / kTheta13))));
    result = pade13_scaled(A / std::ldexp(1.0, s));
    for (int i = 0; i < s; ++i) result = result * result;
  }
  if (!result.allFinite()) {
    throw Error("matrix_exponential: result overflows (|A|_1 = " + format_double(norm1) + ")");
  }
  return result;
}

}  // namespace kmpc
