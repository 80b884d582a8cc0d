#include "epglmm/ep_engine.hpp"

#include "epglmm/matrix_kernels.hpp"
#include "epglmm/probit_special.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace epglmm {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;

// Cholesky factor of the precision -2 A2 encoded by eta2.
Eigen::LLT<SmallMat> precision_llt(const HalfVec& eta2, int d, const char* who) {
  Eigen::LLT<SmallMat> llt(-2.0 * quad_matrix(eta2, d));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(who) + ": natural parameters are not proper");
  }
  return llt;
}

double log_det_from_llt(const Eigen::LLT<SmallMat>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double relative_change(const NaturalParams& next, const NaturalParams& prev) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < next.eta1.size(); ++k) {
    worst = std::max(worst, std::abs(next.eta1[k] - prev.eta1[k]) / (1.0 + std::abs(prev.eta1[k])));
  }
  for (Eigen::Index k = 0; k < next.eta2.size(); ++k) {
    worst = std::max(worst, std::abs(next.eta2[k] - prev.eta2[k]) / (1.0 + std::abs(prev.eta2[k])));
  }
  return worst;
}

NaturalParams without_eta0(NaturalParams p) {
  p.eta0 = 0.0;
  return p;
}

NaturalParams sum_of(const std::vector<NaturalParams>& sites, int d) {
  NaturalParams s = NaturalParams::zero(d);
  for (const auto& site : sites) s += site;
  return s;
}

}  // namespace

NaturalParams NaturalParams::zero(int d) {
  NaturalParams p;
  p.eta1 = SmallVec::Zero(d);
  p.eta2 = HalfVec::Zero(half_length(d));
  return p;
}

bool NaturalParams::is_proper() const {
  Eigen::LLT<SmallMat> llt(-2.0 * quad_matrix(eta2, dim()));
  return llt.info() == Eigen::Success;
}

NaturalParams& NaturalParams::operator+=(const NaturalParams& o) {
  eta0 += o.eta0;
  eta1 += o.eta1;
  eta2 += o.eta2;
  return *this;
}

NaturalParams& NaturalParams::operator-=(const NaturalParams& o) {
  eta0 -= o.eta0;
  eta1 -= o.eta1;
  eta2 -= o.eta2;
  return *this;
}

double a_n(const NaturalParams& eta) {
  const int d = eta.dim();
  // With P = -2 A2:  -1/4 a1^T A2^{-1} a1 = 1/2 a1^T P^{-1} a1,  |-2 A2| = |P|.
  const auto llt = precision_llt(eta.eta2, d, "a_n");
  const SmallVec m = llt.solve(eta.eta1);
  return 0.5 * eta.eta1.dot(m) - 0.5 * log_det_from_llt(llt);
}

NaturalParams k_probit(const NaturalParams& a, const SiteContext& ctx) {
  const int d = a.dim();
  const SmallMat a2 = quad_matrix(a.eta2, d);
  const auto llt = precision_llt(a.eta2, d, "k_probit");
  // A2^{-1} v = -2 P^{-1} v.
  const SmallVec a2inv_c1 = -2.0 * llt.solve(ctx.c1);
  const SmallVec a2inv_a1 = -2.0 * llt.solve(a.eta1);

  const double c1_a2inv_c1 = ctx.c1.dot(a2inv_c1);
  const double r1 = std::sqrt(2.0 * (2.0 - c1_a2inv_c1));
  const double r2 = (2.0 * ctx.c0 - ctx.c1.dot(a2inv_a1)) / r1;
  const double r3 = 2.0 * zeta1(r2) / r1;
  const double r4 = -2.0 * zeta2(r2) / (r1 * r1);

  // R5 = (A2 + r4 c1 c1^T)^{-1} A2 = I - g A2^{-1} c1 c1^T  (Sherman-Morrison),
  // with g = r4 / (1 + r4 c1^T A2^{-1} c1).
  const double denom = 1.0 + r4 * c1_a2inv_c1;
  if (!(denom > 0.0) || !std::isfinite(r4)) {
    throw NumericalError("k_probit: A2 + r4 c1 c1^T is not negative definite");
  }
  const double g = r4 / denom;
  SmallMat r5 = SmallMat::Identity(d, d);
  r5.noalias() -= g * a2inv_c1 * ctx.c1.transpose();

  NaturalParams out;
  out.eta1 = r5.transpose() * (a.eta1 + r3 * ctx.c1);
  SmallMat quad = r5.transpose() * a2;
  quad = 0.5 * (quad + quad.transpose()).eval();
  out.eta2 = quad_coeffs(quad);
  return out;
}

double c_probit(const NaturalParams& a, const NaturalParams& b, const SiteContext& ctx) {
  const int d = a.dim();
  const auto llt_a = precision_llt(a.eta2, d, "c_probit");
  const auto llt_b = precision_llt(b.eta2, d, "c_probit");
  const SmallVec a2inv_c1 = -2.0 * llt_a.solve(ctx.c1);
  const SmallVec a2inv_a1 = -2.0 * llt_a.solve(a.eta1);
  const SmallVec b2inv_b1 = -2.0 * llt_b.solve(b.eta1);

  const double r1 = std::sqrt(2.0 * (2.0 - ctx.c1.dot(a2inv_c1)));
  const double r2 = (2.0 * ctx.c0 - ctx.c1.dot(a2inv_a1)) / r1;
  // |B2| / |A2| == |-2 B2| / |-2 A2| in equal dimension.
  const double log_det_ratio = log_det_from_llt(llt_b) - log_det_from_llt(llt_a);
  return log_phi_cdf(r2) + 0.25 * b.eta1.dot(b2inv_b1) - 0.25 * a.eta1.dot(a2inv_a1) +
         0.5 * log_det_ratio;
}

NaturalParams project_probit_site(const NaturalParams& input, const SiteContext& ctx) {
  NaturalParams out = k_probit(input, ctx);
  out.eta0 = input.eta0 + c_probit(input, out, ctx);
  return out;
}

SiteContext site_context(int y, double fixed_linear, const SmallVec& xr) {
  const double s = 2.0 * y - 1.0;
  return SiteContext{s * fixed_linear, s * xr};
}

NaturalParams prior_message(const Matrix& sigma) {
  const int d = static_cast<int>(sigma.rows());
  if (d < 1 || d > kMaxRandomDim || sigma.cols() != d) {
    throw std::invalid_argument("prior_message: Sigma must be square with dimension in [1, 8]");
  }
  const SmallMat s = sigma;
  Eigen::LLT<SmallMat> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError("prior_message: Sigma is not SPD");
  const SmallMat inv = llt.solve(SmallMat::Identity(d, d));
  NaturalParams p = NaturalParams::zero(d);
  p.eta0 = -0.5 * (d * kLog2Pi + log_det_from_llt(llt));
  p.eta2 = quad_coeffs(SmallMat(-0.5 * 0.5 * (inv + inv.transpose())));
  return p;
}

NaturalParams ep_start_site(int y, const Vector& xf, const SmallVec& xr, const Vector& beta,
                            const SmallVec& u_hat) {
  const double s = 2.0 * y - 1.0;
  const double xr_u = xr.dot(u_hat);
  const double a_hat = s * (beta.dot(xf) + xr_u);
  const double z1 = zeta1(a_hat);
  const double z2 = zeta2(a_hat);
  NaturalParams p;
  p.eta1 = s * z1 * xr - z2 * xr_u * xr;
  p.eta2 = quad_coeffs(SmallMat(0.5 * z2 * xr * xr.transpose()));
  return p;
}

std::vector<NaturalParams> ep_start_sites(const Group& group, const Vector& beta,
                                          const SmallVec& u_hat) {
  std::vector<NaturalParams> out;
  out.reserve(group.y.size());
  for (int j = 0; j < group.size(); ++j) {
    out.push_back(ep_start_site(group.y[j], group.xf.row(j).transpose(), group.xr_row(j), beta, u_hat));
  }
  return out;
}

EPGroupState ep_group_loop(const Group& group, const Vector& beta, const NaturalParams& prior,
                           std::vector<NaturalParams> start, const EpOptions& options) {
  const int n = group.size();
  const int d = prior.dim();
  if (n < 1) throw std::invalid_argument("ep_group_loop: empty group");
  if (static_cast<int>(start.size()) != n) {
    throw std::invalid_argument("ep_group_loop: need one starting message per site");
  }

  std::vector<SiteContext> ctx;
  ctx.reserve(n);
  const Vector fixed_linear = group.xf * beta;
  for (int j = 0; j < n; ++j) ctx.push_back(site_context(group.y[j], fixed_linear[j], group.xr_row(j)));

  EPGroupState state;
  state.prior_message = prior;
  state.site_messages = std::move(start);
  for (auto& site : state.site_messages) site.eta0 = 0.0;
  auto& sites = state.site_messages;
  NaturalParams sum = sum_of(sites, d);

  for (int sweep = 1; sweep <= options.max_iter; ++sweep) {
    double worst = 0.0;
    int failures = 0;
    if (options.mode == SweepMode::Fresh) {
      for (int j = 0; j < n; ++j) {
        const NaturalParams cavity = prior + sum - sites[j];
        NaturalParams proj;
        try {
          proj = k_probit(cavity, ctx[j]);
        } catch (const NumericalError&) {
          ++failures;
          continue;
        }
        NaturalParams next = proj - cavity;
        next.eta0 = 0.0;
        worst = std::max(worst, relative_change(next, sites[j]));
        sum += next - sites[j];
        sites[j] = next;
      }
    } else {
      const std::vector<NaturalParams> previous = sites;
      const NaturalParams stale_sum = sum;
      for (int j = 0; j < n; ++j) {
        const NaturalParams cavity = prior + stale_sum - previous[j];
        try {
          NaturalParams next = k_probit(cavity, ctx[j]) - cavity;
          next.eta0 = 0.0;
          worst = std::max(worst, relative_change(next, previous[j]));
          sites[j] = next;
        } catch (const NumericalError&) {
          ++failures;
        }
      }
      // A simultaneous update can leave the joint approximation improper;
      // halve the step once, then fall back to the previous cycle.
      if (!(prior + sum_of(sites, d)).is_proper()) {
        for (int j = 0; j < n; ++j) {
          sites[j].eta1 = 0.5 * (sites[j].eta1 + previous[j].eta1);
          sites[j].eta2 = 0.5 * (sites[j].eta2 + previous[j].eta2);
        }
        if (!(prior + sum_of(sites, d)).is_proper()) {
          sites = previous;
          failures += n;
        }
      }
    }
    sum = sum_of(sites, d);
    state.iterations = sweep;
    state.failed_updates += failures;
    if (failures == 0 && worst < options.tol) {
      state.converged = true;
      break;
    }
  }

  // Zeroth-order coefficients, computed once the (eta1, eta2) fixed point is reached.
  for (int j = 0; j < n; ++j) {
    const NaturalParams cavity = without_eta0(prior + sum - sites[j]);
    const NaturalParams tilted = sites[j] + cavity;
    sites[j].eta0 = c_probit(cavity, tilted, ctx[j]);
  }
  state.sum_sites = sum_of(sites, d);
  return state;
}

EPGroupState ep_group_loop(const Group& group, const Vector& beta, const Matrix& sigma,
                           std::vector<NaturalParams> start, const EpOptions& options) {
  return ep_group_loop(group, beta, prior_message(sigma), std::move(start), options);
}

double ep_group_loglik(const EPGroupState& state) {
  const NaturalParams total = state.total();
  const int d = total.dim();
  return 0.5 * d * kLog2Pi + total.eta0 + a_n(total);
}

BestPrediction ep_best_predict(const EPGroupState& state) {
  const NaturalParams total = state.total();
  const int d = total.dim();
  const auto llt = precision_llt(total.eta2, d, "ep_best_predict");
  BestPrediction bp;
  // cov = -1/2 A^{-1} = P^{-1} with P = -2 A.
  bp.cov = llt.solve(SmallMat::Identity(d, d));
  bp.cov = 0.5 * (bp.cov + bp.cov.transpose()).eval();
  bp.mean = bp.cov * total.eta1;
  return bp;
}

}  // namespace epglmm
