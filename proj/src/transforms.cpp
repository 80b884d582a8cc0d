#include "epglmm/transforms.hpp"

#include "epglmm/matrix_kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace epglmm {

namespace {

void check_omega_length(const Vector& omega, int d) {
  if (d < 1 || omega.size() != half_length(d)) {
    throw std::invalid_argument("omega length does not match d(d+1)/2");
  }
}

}  // namespace

Matrix sigma_from_theta(const Vector& theta) {
  return matrix_exp(2.0 * unvech(theta));
}

Vector theta_from_sigma(const Matrix& sigma) {
  return vech(0.5 * matrix_log(sigma));
}

Vector sd_corr_from_sigma(const Matrix& sigma) {
  const int d = static_cast<int>(sigma.rows());
  Vector out(half_length(d));
  const Vector sd = diagonal_of(sigma).array().sqrt();
  out.head(d) = sd;
  if (d > 1) {
    Matrix corr = sigma;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) corr(i, j) /= sd[i] * sd[j];
    out.tail(out.size() - d) = vecbd(corr);
  }
  return out;
}

Vector omega_from_sigma(const Matrix& sigma) {
  const int d = static_cast<int>(sigma.rows());
  Vector omega = sd_corr_from_sigma(sigma);
  for (int k = 0; k < d; ++k) omega[k] = std::log(omega[k]);
  for (Eigen::Index k = d; k < omega.size(); ++k) omega[k] = std::atanh(omega[k]);
  return omega;
}

Matrix sigma_from_omega(const Vector& omega, int d) {
  check_omega_length(omega, d);
  Matrix corr = Matrix::Identity(d, d);
  Eigen::Index k = d;
  for (int j = 0; j < d; ++j) {
    for (int i = j + 1; i < d; ++i) corr(i, j) = corr(j, i) = std::tanh(omega[k++]);
  }
  const Vector sd = omega.head(d).array().exp();
  return sd.asDiagonal() * corr * sd.asDiagonal();
}

Vector theta_to_omega(const Vector& theta, int d) {
  if (theta.size() != half_length(d)) throw std::invalid_argument("theta length does not match d(d+1)/2");
  return omega_from_sigma(sigma_from_theta(theta));
}

Vector omega_to_theta(const Vector& omega, int d) {
  return theta_from_sigma(sigma_from_omega(omega, d));
}

}  // namespace epglmm
