#pragma once

// Unconstrained encodings of a covariance matrix Sigma (d x d, SPD).
//
//   theta = vech(log(Sigma) / 2)                  (matrix-log form, used to optimize)
//   omega = [log sigma_1..log sigma_d, atanh rho]  (interval form; rho in vecbd order)

#include "epglmm/types.hpp"

namespace epglmm {

Matrix sigma_from_theta(const Vector& theta);
Vector theta_from_sigma(const Matrix& sigma);

Matrix sigma_from_omega(const Vector& omega, int d);
Vector omega_from_sigma(const Matrix& sigma);

Vector theta_to_omega(const Vector& theta, int d);
Vector omega_to_theta(const Vector& omega, int d);

/// Standard deviations and correlations of Sigma, in omega order.
Vector sd_corr_from_sigma(const Matrix& sigma);

}  // namespace epglmm
