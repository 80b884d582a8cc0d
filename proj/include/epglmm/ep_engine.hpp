#pragma once

// Expectation propagation for the probit mixed model, one group at a time.
//
// Every message is an unnormalized Gaussian in the random effect u,
//     exp{ eta0 + u^T eta1 + vech(u u^T)^T eta2 },
// and the probit site updates are closed-form Kullback-Leibler projections.

#include "epglmm/dataset.hpp"
#include "epglmm/types.hpp"

#include <vector>

namespace epglmm {

struct NaturalParams {
  double eta0 = 0.0;
  SmallVec eta1;
  HalfVec eta2;

  static NaturalParams zero(int d);
  int dim() const { return static_cast<int>(eta1.size()); }

  /// True when -quad_matrix(eta2) is positive definite (integrable density).
  bool is_proper() const;

  NaturalParams& operator+=(const NaturalParams& o);
  NaturalParams& operator-=(const NaturalParams& o);
  friend NaturalParams operator+(NaturalParams a, const NaturalParams& b) { return a += b; }
  friend NaturalParams operator-(NaturalParams a, const NaturalParams& b) { return a -= b; }
};

/// Auxiliary arguments of the projected factor Phi(c0 + c1^T u).
struct SiteContext {
  double c0 = 0.0;
  SmallVec c1;
};

/// log of the Gaussian normalizer: the integral of exp(u^T eta1 + vech(uu^T)^T eta2)
/// equals (2 pi)^{d/2} exp(a_n(.)). eta0 is ignored.
/// Throws NumericalError when eta2 is not proper.
double a_n(const NaturalParams& eta);

/// (eta1*, eta2*) of the projection of Phi(c0 + c1^T u) exp(u^T a1 + vech(uu^T)^T a2)
/// onto unnormalized Gaussians. The returned eta0 is zero.
NaturalParams k_probit(const NaturalParams& a, const SiteContext& ctx);

/// Zeroth-order coefficient of that projection, given its (eta1*, eta2*) in b.
double c_probit(const NaturalParams& a, const NaturalParams& b, const SiteContext& ctx);

/// Full projection of exp(a.eta0) Phi(c0 + c1^T u) exp(u^T a1 + vech(uu^T)^T a2).
NaturalParams project_probit_site(const NaturalParams& input, const SiteContext& ctx);

/// Site context for response y with linear predictor offset beta^T xF.
SiteContext site_context(int y, double fixed_linear, const SmallVec& xr);

/// Message from the random-effect density N(0, Sigma).
NaturalParams prior_message(const Matrix& sigma);

/// Starting site message from a quadratic Taylor model of zeta at u_hat.
NaturalParams ep_start_site(int y, const Vector& xf, const SmallVec& xr, const Vector& beta,
                            const SmallVec& u_hat);

std::vector<NaturalParams> ep_start_sites(const Group& group, const Vector& beta,
                                          const SmallVec& u_hat);

enum class SweepMode {
  Fresh,    // cavity sum refreshed after every site update
  Literal,  // sum recomputed once per cycle, as the algorithm is printed
};

struct EpOptions {
  double tol = 1e-5;
  int max_iter = 100;
  SweepMode mode = SweepMode::Fresh;
};

struct EPGroupState {
  std::vector<NaturalParams> site_messages;
  NaturalParams prior_message;
  NaturalParams sum_sites;
  bool converged = false;
  int iterations = 0;
  int failed_updates = 0;

  int n_sites() const { return static_cast<int>(site_messages.size()); }
  /// prior_message + sum_sites: the converged Gaussian approximation of the
  /// group's integrand.
  NaturalParams total() const { return prior_message + sum_sites; }
};

/// Runs the per-group message-passing fixed point, then fills the eta0
/// entries of every site message.
EPGroupState ep_group_loop(const Group& group, const Vector& beta, const NaturalParams& prior,
                           std::vector<NaturalParams> start, const EpOptions& options);

EPGroupState ep_group_loop(const Group& group, const Vector& beta, const Matrix& sigma,
                           std::vector<NaturalParams> start, const EpOptions& options);

/// Approximate log-likelihood contribution of the group.
double ep_group_loglik(const EPGroupState& state);

struct BestPrediction {
  SmallVec mean;
  SmallMat cov;
};

/// Mean and covariance of the Gaussian with natural parameters state.total().
BestPrediction ep_best_predict(const EPGroupState& state);

}  // namespace epglmm
