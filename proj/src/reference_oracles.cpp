#include "epglmm/reference_oracles.hpp"

#include "epglmm/probit_special.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace epglmm {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;

GHRule build_gh_rule(int order) {
  const int n = order;
  Vector nodes(n);
  if (n == 1) {
    nodes[0] = 0.0;
  } else {
    Vector diag = Vector::Zero(n);
    Vector sub(n - 1);
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Matrix> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    nodes = es.eigenvalues();
  }

  GHRule rule{Vector(n), Vector(n), Vector(n)};
  const double p0 = std::pow(std::numbers::pi, -0.25);
  for (int k = 0; k < n; ++k) {
    double x = nodes[k];
    double deriv = 0.0;
    // Orthonormal Hermite recurrence; polish the node with Newton steps.
    for (int it = 0; it < 8; ++it) {
      double p1 = p0;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = x * std::sqrt(2.0 / j) * p2 - std::sqrt(static_cast<double>(j - 1) / j) * p3;
      }
      deriv = std::sqrt(2.0 * n) * p2;
      const double step = p1 / deriv;
      x -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    rule.nodes[k] = x;
    rule.log_weights[k] = std::log(2.0) - 2.0 * std::log(std::abs(deriv));
  }
  // Enforce exact symmetry about zero.
  for (int k = 0; k < n / 2; ++k) {
    const double x = 0.5 * (rule.nodes[n - 1 - k] - rule.nodes[k]);
    const double lw = 0.5 * (rule.log_weights[k] + rule.log_weights[n - 1 - k]);
    rule.nodes[k] = -x;
    rule.nodes[n - 1 - k] = x;
    rule.log_weights[k] = lw;
    rule.log_weights[n - 1 - k] = lw;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  rule.weights = rule.log_weights.array().exp();
  return rule;
}

struct GroupTerms {
  Vector offsets;  // beta^T xF_j
  Vector signs;    // 2 y_j - 1
};

GroupTerms group_terms(const Group& group, const Vector& beta) {
  GroupTerms t{group.xf * beta, Vector(group.size())};
  for (int j = 0; j < group.size(); ++j) t.signs[j] = 2.0 * group.y[j] - 1.0;
  return t;
}

double sum_log_phi(const Group& group, const GroupTerms& t, const SmallVec& u) {
  double s = 0.0;
  for (int j = 0; j < group.size(); ++j) {
    s += log_phi_cdf(t.signs[j] * (t.offsets[j] + group.xr.row(j).dot(u)));
  }
  return s;
}

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

struct Grid {
  std::vector<SmallVec> points;
  std::vector<double> log_terms;  // log weight + log integrand (Jacobian included)
};

Grid adaptive_grid(const Group& group, const Vector& beta, const Matrix& sigma, int order) {
  const int d = static_cast<int>(sigma.rows());
  if (d > 2) {
    throw std::invalid_argument("adaptive Gauss-Hermite oracle supports random-effect dimension <= 2");
  }
  const LaplaceGroupFit lap = laplace_group(group, beta, sigma);
  const SmallMat s = sigma;
  Eigen::LLT<SmallMat> sig_llt(s);
  if (sig_llt.info() != Eigen::Success) throw NumericalError("aghq: Sigma is not SPD");
  const SmallMat sig_inv = sig_llt.solve(SmallMat::Identity(d, d));
  const double log_det_sig = 2.0 * sig_llt.matrixLLT().diagonal().array().log().sum();

  // Scale L with L L^T = neg_hess^{-1}.
  const SmallMat curv_inv = Eigen::LLT<SmallMat>(lap.neg_hess).solve(SmallMat::Identity(d, d));
  Eigen::LLT<SmallMat> scale_llt(0.5 * (curv_inv + curv_inv.transpose()));
  if (scale_llt.info() != Eigen::Success) throw NumericalError("aghq: curvature is not SPD");
  const SmallMat l = scale_llt.matrixL();
  const double log_jac = 0.5 * d * std::log(2.0) + l.diagonal().array().log().sum();

  const GHRule& rule = gh_rule(order);
  const GroupTerms terms = group_terms(group, beta);
  const int total = d == 1 ? order : order * order;
  Grid grid;
  grid.points.reserve(total);
  grid.log_terms.reserve(total);
  SmallVec z(d);
  for (int idx = 0; idx < total; ++idx) {
    double log_w = 0.0;
    for (int k = 0, rem = idx; k < d; ++k, rem /= order) {
      const int node = rem % order;
      z[k] = rule.nodes[node];
      log_w += rule.log_weights[node] + z[k] * z[k];
    }
    const SmallVec u = lap.mode + std::numbers::sqrt2 * (l * z);
    const double log_f = sum_log_phi(group, terms, u) - 0.5 * u.dot(sig_inv * u) -
                         0.5 * (d * kLog2Pi + log_det_sig);
    grid.points.push_back(u);
    grid.log_terms.push_back(log_w + log_jac + log_f);
  }
  return grid;
}

}  // namespace

const GHRule& gh_rule(int order) {
  if (order < 1) throw std::invalid_argument("gh_rule: order must be >= 1");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GHRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[order];
  if (!slot) slot = std::make_unique<GHRule>(build_gh_rule(order));
  return *slot;
}

LaplaceGroupFit laplace_group(const Group& group, const Vector& beta, const Matrix& sigma,
                              const SmallVec* start) {
  const int d = static_cast<int>(sigma.rows());
  const SmallMat s = sigma;
  Eigen::LLT<SmallMat> sig_llt(s);
  if (sig_llt.info() != Eigen::Success) throw NumericalError("laplace_group: Sigma is not SPD");
  const SmallMat sig_inv = sig_llt.solve(SmallMat::Identity(d, d));
  const double log_det_sig = 2.0 * sig_llt.matrixLLT().diagonal().array().log().sum();
  const GroupTerms terms = group_terms(group, beta);
  const int n = group.size();

  auto objective = [&](const SmallVec& u) {
    double v = -0.5 * u.dot(sig_inv * u);
    for (int j = 0; j < n; ++j) v += zeta(terms.signs[j] * (terms.offsets[j] + group.xr.row(j).dot(u)));
    return v;
  };
  auto derivatives = [&](const SmallVec& u, SmallVec& grad, SmallMat& neg_hess) {
    grad = -(sig_inv * u);
    neg_hess = sig_inv;
    for (int j = 0; j < n; ++j) {
      const SmallVec xr = group.xr_row(j);
      const double a = terms.signs[j] * (terms.offsets[j] + xr.dot(u));
      grad += terms.signs[j] * zeta1(a) * xr;
      neg_hess -= zeta2(a) * xr * xr.transpose();
    }
  };

  LaplaceGroupFit fit;
  fit.mode = start != nullptr ? *start : SmallVec::Zero(d);
  SmallVec grad(d);
  SmallMat neg_hess(d, d);
  double value = objective(fit.mode);
  fit.converged = false;
  for (int it = 0; it < 50; ++it) {
    derivatives(fit.mode, grad, neg_hess);
    fit.iterations = it;
    if (grad.cwiseAbs().maxCoeff() < 1e-10) {
      fit.converged = true;
      break;
    }
    const SmallVec step = Eigen::LLT<SmallMat>(neg_hess).solve(grad);
    if (grad.dot(step) < 1e-12 * (1.0 + std::abs(value))) {
      // Expected gain is below rounding of the objective: the line search
      // cannot discriminate, so take the full Newton step.
      fit.mode += step;
      value = objective(fit.mode);
      continue;
    }
    double scale = 1.0;
    SmallVec next = fit.mode + step;
    double next_value = objective(next);
    for (int h = 0; h < 20 && !(next_value >= value); ++h) {
      scale *= 0.5;
      next = fit.mode + scale * step;
      next_value = objective(next);
    }
    if (!(next_value >= value)) {
      // No ascent along the Newton direction: we sit at the mode to rounding.
      fit.converged = grad.cwiseAbs().maxCoeff() < 1e-7;
      break;
    }
    fit.mode = next;
    value = next_value;
  }
  if (!fit.converged) {
    fit.mode = SmallVec::Zero(d);
    value = objective(fit.mode);
  }
  derivatives(fit.mode, grad, neg_hess);
  fit.neg_hess = neg_hess;
  Eigen::LLT<SmallMat> h_llt(neg_hess);
  const double log_det_h = 2.0 * h_llt.matrixLLT().diagonal().array().log().sum();
  fit.loglik_contrib = value - n * std::numbers::ln2 + 0.5 * d * kLog2Pi - 0.5 * log_det_h -
                       0.5 * (d * kLog2Pi + log_det_sig);
  return fit;
}

double aghq_group_loglik(const Group& group, const Vector& beta, const Matrix& sigma, int order) {
  const Grid grid = adaptive_grid(group, beta, sigma, order);
  return log_sum_exp(grid.log_terms);
}

PosteriorMoments aghq_posterior_moments(const Group& group, const Vector& beta,
                                        const Matrix& sigma, int order) {
  const int d = static_cast<int>(sigma.rows());
  const Grid grid = adaptive_grid(group, beta, sigma, order);
  PosteriorMoments pm;
  pm.loglik = log_sum_exp(grid.log_terms);
  pm.mean = SmallVec::Zero(d);
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    pm.mean += std::exp(grid.log_terms[k] - pm.loglik) * grid.points[k];
  }
  pm.cov = SmallMat::Zero(d, d);
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    const SmallVec r = grid.points[k] - pm.mean;
    pm.cov += std::exp(grid.log_terms[k] - pm.loglik) * r * r.transpose();
  }
  return pm;
}

ProbitGaussianMoments probit_gaussian_moments(double a, const Vector& b) {
  const double root = std::sqrt(b.squaredNorm() + 1.0);
  const double z = a / root;
  ProbitGaussianMoments m;
  m.zeroth = std_normal_cdf(z);
  m.first = b * (std_normal_pdf(z) / root);
  const int d = static_cast<int>(b.size());
  m.second = m.zeroth * Matrix::Identity(d, d) -
             (a * std_normal_pdf(z) / (root * root * root)) * (b * b.transpose());
  return m;
}

}  // namespace epglmm
