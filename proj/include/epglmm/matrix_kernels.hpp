#pragma once

// Small-matrix calculus: vec/vech, duplication matrices, spectral
// decomposition and the matrix logarithm/exponential built on it.
//
// vech ordering is column-major on-and-below the diagonal throughout, so
// that duplication_matrix(d) * vech(A) == vec(A) for symmetric A.

#include "epglmm/types.hpp"

namespace epglmm {

/// The d^2 x d(d+1)/2 zero/one matrix D_d with D_d vech(A) = vec(A).
Matrix duplication_matrix(int d);

/// Moore-Penrose inverse (D^T D)^{-1} D^T of the duplication matrix.
Matrix duplication_pinv(int d);

Vector vech(const Matrix& a);
Matrix unvech(const Vector& v);
Vector vec(const Matrix& a);
Matrix unvec(const Vector& flat, int d);

/// Dimension d with d(d+1)/2 == len; throws std::invalid_argument otherwise.
int dim_from_half_length(Eigen::Index len);

struct SpectralDecomposition {
  Matrix vectors;  // orthonormal columns
  Vector values;   // ascending
};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
/// Throws NumericalError if the sweeps fail to annihilate the off-diagonal.
SpectralDecomposition spectral(const Matrix& a);

/// U diag(log lambda) U^T; throws NumericalError on a non-positive eigenvalue.
Matrix matrix_log(const Matrix& a);
Matrix matrix_exp(const Matrix& s);

Vector diagonal_of(const Matrix& a);

/// Strictly-below-diagonal entries, column by column (top to bottom within
/// each column). Requires d >= 2.
Vector vecbd(const Matrix& a);

// Natural-parameter quadratic coefficients <-> the matrix they encode:
// vech(x x^T)^T eta2 == x^T quad_matrix(eta2) x.

/// unvec(D^{+T} eta2): diagonal entries copied, off-diagonal halved.
inline SmallMat quad_matrix(const HalfVec& eta2, int d) {
  SmallMat m(d, d);
  int k = 0;
  for (int j = 0; j < d; ++j) {
    m(j, j) = eta2[k++];
    for (int i = j + 1; i < d; ++i) {
      m(i, j) = 0.5 * eta2[k++];
      m(j, i) = m(i, j);
    }
  }
  return m;
}

/// D^T vec(m) for symmetric m: diagonal copied, off-diagonal doubled.
inline HalfVec quad_coeffs(const SmallMat& m) {
  const int d = static_cast<int>(m.rows());
  HalfVec out(half_length(d));
  int k = 0;
  for (int j = 0; j < d; ++j) {
    out[k++] = m(j, j);
    for (int i = j + 1; i < d; ++i) out[k++] = m(i, j) + m(j, i);
  }
  return out;
}

}  // namespace epglmm
