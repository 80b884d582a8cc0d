#pragma once

// Ground-truth engines for the group log-likelihood
//     l_i = log int prod_j Phi((2y_ij - 1)(beta^T xF_ij + u^T xR_ij)) N(u; 0, Sigma) du:
// adaptive Gauss-Hermite quadrature (d^R <= 2), the Laplace approximation,
// and the closed-form Gaussian moments of a single probit factor.

#include "epglmm/dataset.hpp"
#include "epglmm/types.hpp"

namespace epglmm {

/// Gauss-Hermite rule for the weight exp(-x^2): nodes ascending, weights sum to sqrt(pi).
struct GHRule {
  Vector nodes;
  Vector weights;
  Vector log_weights;

  int order() const { return static_cast<int>(nodes.size()); }
};

/// Golub-Welsch start, Newton-polished nodes. Rules are cached per order.
const GHRule& gh_rule(int order);

struct LaplaceGroupFit {
  SmallVec mode;
  SmallMat neg_hess;
  double loglik_contrib = 0.0;
  bool converged = true;
  int iterations = 0;
};

/// Newton ascent (step halving) on sum_j zeta(a_ij(u)) - u^T Sigma^{-1} u / 2.
/// On non-convergence after 50 steps the mode falls back to zero and
/// `converged` is false.
LaplaceGroupFit laplace_group(const Group& group, const Vector& beta, const Matrix& sigma,
                              const SmallVec* start = nullptr);

/// Adaptive Gauss-Hermite log-likelihood of one group, recentred and rescaled
/// at the Laplace mode. Throws std::invalid_argument for d^R > 2.
double aghq_group_loglik(const Group& group, const Vector& beta, const Matrix& sigma,
                         int order = 100);

struct PosteriorMoments {
  SmallVec mean;
  SmallMat cov;
  double loglik = 0.0;
};

/// E(u | y_i) and Cov(u | y_i) by the same adaptive rule.
PosteriorMoments aghq_posterior_moments(const Group& group, const Vector& beta,
                                        const Matrix& sigma, int order = 100);

struct ProbitGaussianMoments {
  double zeroth = 0.0;
  Vector first;
  Matrix second;
};

/// Integrals of 1, x and x x^T against Phi(a + b^T x) phi_I(x).
ProbitGaussianMoments probit_gaussian_moments(double a, const Vector& b);

}  // namespace epglmm
