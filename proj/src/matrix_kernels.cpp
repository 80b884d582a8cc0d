#include "epglmm/matrix_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace epglmm {

namespace {

void require_square(const Matrix& a, const char* who) {
  if (a.rows() != a.cols() || a.rows() < 1) {
    throw std::invalid_argument(std::string(who) + ": expected a non-empty square matrix");
  }
}

// Index of entry (i, j), i >= j, within vech of a d x d matrix.
int vech_index(int i, int j, int d) { return j * d - j * (j - 1) / 2 + (i - j); }

}  // namespace

Matrix duplication_matrix(int d) {
  if (d < 1) throw std::invalid_argument("duplication_matrix: d must be >= 1");
  Matrix dm = Matrix::Zero(d * d, half_length(d));
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      const int k = i >= j ? vech_index(i, j, d) : vech_index(j, i, d);
      dm(j * d + i, k) = 1.0;
    }
  }
  return dm;
}

Matrix duplication_pinv(int d) {
  const Matrix dm = duplication_matrix(d);
  // D^T D is diagonal with entries 1 (diagonal positions) or 2.
  const Vector counts = dm.colwise().sum().transpose();
  return counts.cwiseInverse().asDiagonal() * dm.transpose();
}

int dim_from_half_length(Eigen::Index len) {
  const int d = static_cast<int>(std::lround((std::sqrt(8.0 * static_cast<double>(len) + 1.0) - 1.0) / 2.0));
  if (d < 1 || half_length(d) != len) {
    throw std::invalid_argument("vector length " + std::to_string(len) +
                                " is not of the form d(d+1)/2");
  }
  return d;
}

Vector vech(const Matrix& a) {
  require_square(a, "vech");
  const int d = static_cast<int>(a.rows());
  Vector v(half_length(d));
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) v[k++] = a(i, j);
  return v;
}

Matrix unvech(const Vector& v) {
  const int d = dim_from_half_length(v.size());
  Matrix a(d, d);
  int k = 0;
  for (int j = 0; j < d; ++j) {
    for (int i = j; i < d; ++i) {
      a(i, j) = v[k];
      a(j, i) = v[k];
      ++k;
    }
  }
  return a;
}

Vector vec(const Matrix& a) { return a.reshaped(); }

Matrix unvec(const Vector& flat, int d) {
  if (d < 1 || flat.size() != static_cast<Eigen::Index>(d) * d) {
    throw std::invalid_argument("unvec: length " + std::to_string(flat.size()) +
                                " does not match d^2 for d=" + std::to_string(d));
  }
  return flat.reshaped(d, d);
}

SpectralDecomposition spectral(const Matrix& a) {
  require_square(a, "spectral");
  const int d = static_cast<int>(a.rows());
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("spectral: matrix is not symmetric");
  }
  if (!a.allFinite()) throw NumericalError("spectral: non-finite entries");

  Matrix m = 0.5 * (a + a.transpose());
  Matrix u = Matrix::Identity(d, d);

  constexpr int kMaxSweeps = 60;
  bool converged = d == 1;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    double off = 0.0;
    for (int j = 0; j < d; ++j)
      for (int i = j + 1; i < d; ++i) off += m(i, j) * m(i, j);
    const double diag = m.diagonal().squaredNorm();
    if (off <= 1e-32 * diag || off == 0.0) {
      converged = true;
      break;
    }
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        // Rotation annihilating m(p, q) (Golub & Van Loan, sym.schur2).
        const double tau = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < d; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        m(p, q) = 0.0;
        m(q, p) = 0.0;
        for (int k = 0; k < d; ++k) {
          const double ukp = u(k, p);
          const double ukq = u(k, q);
          u(k, p) = c * ukp - s * ukq;
          u(k, q) = s * ukp + c * ukq;
        }
      }
    }
  }
  if (!converged) throw NumericalError("spectral: Jacobi sweeps did not converge");

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return m(x, x) < m(y, y); });
  SpectralDecomposition out{Matrix(d, d), Vector(d)};
  for (int k = 0; k < d; ++k) {
    out.values[k] = m(order[k], order[k]);
    out.vectors.col(k) = u.col(order[k]);
  }
  return out;
}

Matrix matrix_log(const Matrix& a) {
  const SpectralDecomposition sd = spectral(a);
  if (sd.values.minCoeff() <= 0.0) {
    throw NumericalError("matrix_log: matrix is not positive definite");
  }
  const Vector logs = sd.values.array().log();
  Matrix out = sd.vectors * logs.asDiagonal() * sd.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

Matrix matrix_exp(const Matrix& s) {
  const SpectralDecomposition sd = spectral(s);
  const Vector exps = sd.values.array().exp();
  Matrix out = sd.vectors * exps.asDiagonal() * sd.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

Vector diagonal_of(const Matrix& a) {
  require_square(a, "diagonal_of");
  return a.diagonal();
}

Vector vecbd(const Matrix& a) {
  require_square(a, "vecbd");
  const int d = static_cast<int>(a.rows());
  if (d < 2) throw std::invalid_argument("vecbd: requires dimension >= 2");
  Vector v(d * (d - 1) / 2);
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j + 1; i < d; ++i) v[k++] = a(i, j);
  return v;
}

}  // namespace epglmm
