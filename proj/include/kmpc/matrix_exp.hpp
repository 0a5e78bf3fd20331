#ifndef KMPC_MATRIX_EXP_HPP
#define KMPC_MATRIX_EXP_HPP

#include "kmpc/types.hpp"

namespace kmpc {

/// e^A by scaling and squaring with diagonal Pade approximants of degree
/// 3, 5, 7, 9 or 13, chosen from the 1-norm of A (Higham's 2005 scheme).
///
/// Throws ContractViolation for non-square or non-finite input and Error when
/// the result overflows; the message carries the 1-norm of A.
MatrixXd matrix_exponential(const MatrixXd& A);

}  // namespace kmpc

#endif  // KMPC_MATRIX_EXP_HPP
