#include "epglmm/mle_driver.hpp"

#include "epglmm/matrix_kernels.hpp"
#include "epglmm/probit_special.hpp"
#include "epglmm/reference_oracles.hpp"
#include "epglmm/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

namespace epglmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots so the fold order never depends on scheduling.
template <class Body>
void parallel_for(int n, int threads, const Body& body) {
  const int workers = std::clamp(threads, 1, std::max(n, 1));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Vector cache_key(const Vector& beta, const Matrix& sigma) {
  const Vector s = vech(sigma);
  Vector key(beta.size() + s.size());
  key << beta, s;
  return key;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::EP: return "ep";
    case Method::Laplace: return "laplace";
    case Method::AGHQ: return "aghq";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "ep") return Method::EP;
  if (name == "laplace") return Method::Laplace;
  if (name == "aghq") return Method::AGHQ;
  throw std::invalid_argument("unknown method '" + name + "' (expected ep, laplace or aghq)");
}

LikelihoodEvaluator::LikelihoodEvaluator(const GroupedDataset& data, Method method, EpOptions ep,
                                         int aghq_order, int threads)
    : data_(data), method_(method), ep_(ep), aghq_order_(aghq_order), threads_(threads) {
  data_.validate();
  if (method_ == Method::AGHQ && data_.dim_random > 2) {
    throw std::invalid_argument("adaptive quadrature supports at most two random effects");
  }
  modes_.assign(data_.num_groups(), SmallVec::Zero(data_.dim_random));
}

void LikelihoodEvaluator::refresh_cache(const Vector& beta, const Matrix& sigma) {
  const int m = data_.num_groups();
  std::vector<SmallVec> next(m);
  parallel_for(m, threads_, [&](int i) { next[i] = laplace_group(data_.groups[i], beta, sigma).mode; });
  modes_ = std::move(next);
  cache_key_ = cache_key(beta, sigma);
  cache_valid_ = true;
}

void LikelihoodEvaluator::maybe_refresh(const Vector& beta, const Matrix& sigma) {
  if (cache_valid_ && frozen_) return;
  if (cache_valid_ && (cache_key(beta, sigma) - cache_key_).cwiseAbs().maxCoeff() <= cache_radius) return;
  refresh_cache(beta, sigma);
}

double LikelihoodEvaluator::group_term(int i, const Vector& beta, const Matrix& sigma,
                                       const NaturalParams& prior, bool& ok) const {
  const Group& g = data_.groups[i];
  ok = true;
  switch (method_) {
    case Method::EP: {
      const EPGroupState state = ep_group_loop(g, beta, prior, ep_start_sites(g, beta, modes_[i]), ep_);
      if (!state.converged) {
        ok = false;
        return kNegInf;
      }
      return ep_group_loglik(state);
    }
    case Method::Laplace:
      return laplace_group(g, beta, sigma, &modes_[i]).loglik_contrib;
    case Method::AGHQ:
      return aghq_group_loglik(g, beta, sigma, aghq_order_);
  }
  return kNegInf;
}

std::vector<double> LikelihoodEvaluator::group_logliks(const Vector& beta, const Matrix& sigma) {
  if (beta.size() != data_.dim_fixed || sigma.rows() != data_.dim_random || sigma.cols() != data_.dim_random) {
    throw std::invalid_argument("parameter dimensions do not match the dataset");
  }
  ++evaluations_;
  const int m = data_.num_groups();
  std::vector<double> out(m, kNegInf);
  last_nonconverged_ = 0;
  if (!beta.allFinite() || !sigma.allFinite()) {
    last_nonconverged_ = m;
    return out;
  }
  NaturalParams prior;
  try {
    prior = prior_message(sigma);
  } catch (const NumericalError&) {
    last_nonconverged_ = m;
    return out;
  }
  maybe_refresh(beta, sigma);
  std::vector<char> ok(m, 1);
  parallel_for(m, threads_, [&](int i) {
    bool good = true;
    try {
      out[i] = group_term(i, beta, sigma, prior, good);
    } catch (const NumericalError&) {
      good = false;
    }
    if (!good || !std::isfinite(out[i])) {
      ok[i] = 0;
      out[i] = kNegInf;
    }
  });
  last_nonconverged_ = static_cast<int>(std::count(ok.begin(), ok.end(), 0));
  return out;
}

double LikelihoodEvaluator::loglik(const Vector& beta, const Matrix& sigma) {
  const std::vector<double> terms = group_logliks(beta, sigma);
  if (last_nonconverged_ > 0) return kNegInf;
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

double LikelihoodEvaluator::loglik(const Vector& params, Parametrization par) {
  Vector beta;
  Matrix sigma;
  try {
    unpack_params(params, data_.dim_fixed, data_.dim_random, par, beta, sigma);
  } catch (const NumericalError&) {
    return kNegInf;
  }
  return loglik(beta, sigma);
}

void unpack_params(const Vector& params, int dim_fixed, int dim_random, Parametrization par,
                   Vector& beta, Matrix& sigma) {
  const int q = half_length(dim_random);
  if (params.size() != dim_fixed + q) throw std::invalid_argument("parameter vector has the wrong length");
  beta = params.head(dim_fixed);
  const Vector tail = params.tail(q);
  if (!tail.allFinite()) throw NumericalError("covariance parameters are not finite");
  sigma = par == Parametrization::Theta ? sigma_from_theta(tail) : sigma_from_omega(tail, dim_random);
}

Vector probit_irls(const GroupedDataset& data, int max_iter) {
  const int p = data.dim_fixed;
  Vector beta = Vector::Zero(p);
  for (int it = 0; it < max_iter; ++it) {
    Matrix xtwx = Matrix::Zero(p, p);
    Vector xtwz = Vector::Zero(p);
    for (const Group& g : data.groups) {
      for (int j = 0; j < g.size(); ++j) {
        const Vector x = g.xf.row(j).transpose();
        const double eta = std::clamp(x.dot(beta), -8.0, 8.0);
        const double mu = std_normal_cdf(eta);
        const double dens = std_normal_pdf(eta);
        const double w = dens * dens / (mu * (1.0 - mu));
        const double z = eta + (g.y[j] - mu) / dens;
        xtwx += w * x * x.transpose();
        xtwz += w * z * x;
      }
    }
    Eigen::LDLT<Matrix> ldlt(xtwx);
    if (ldlt.info() != Eigen::Success) break;
    const Vector next = ldlt.solve(xtwz);
    if (!next.allFinite()) break;
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (change < 1e-8) break;
  }
  // Separated data push the estimate off to infinity; keep a usable start.
  return beta.cwiseMax(-5.0).cwiseMin(5.0);
}

std::vector<std::string> parameter_names(int dim_fixed, int dim_random) {
  std::vector<std::string> names;
  for (int k = 0; k < dim_fixed; ++k) names.push_back("beta" + std::to_string(k));
  for (int k = 0; k < dim_random; ++k) names.push_back("sigma" + std::to_string(k + 1));
  for (int j = 0; j < dim_random; ++j)
    for (int i = j + 1; i < dim_random; ++i)
      names.push_back("rho" + std::to_string(j + 1) + std::to_string(i + 1));
  return names;
}

std::vector<CiRow> confidence_intervals(const Matrix& hessian, const Vector& estimates,
                                        int dim_fixed, int dim_random, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const Eigen::Index p = estimates.size();
  if (hessian.rows() != p || hessian.cols() != p || p != dim_fixed + half_length(dim_random)) {
    throw std::invalid_argument("confidence_intervals: dimension mismatch");
  }
  const std::vector<std::string> names = parameter_names(dim_fixed, dim_random);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double mult = std_normal_quantile(1.0 - 0.5 * alpha);

  Eigen::FullPivLU<Matrix> lu(-hessian);
  const bool invertible = hessian.allFinite() && lu.isInvertible();
  Matrix cov;
  if (invertible) cov = lu.inverse();

  std::vector<CiRow> rows;
  for (Eigen::Index k = 0; k < p; ++k) {
    CiRow row;
    row.name = names[k];
    const double est = estimates[k];
    double lo = nan;
    double hi = nan;
    if (invertible && cov(k, k) > 0.0 && std::isfinite(cov(k, k))) {
      const double half = mult * std::sqrt(cov(k, k));
      lo = est - half;
      hi = est + half;
      row.valid = true;
    }
    if (k < dim_fixed) {
      row.lower = lo;
      row.estimate = est;
      row.upper = hi;
    } else if (k < dim_fixed + dim_random) {
      row.lower = std::exp(lo);
      row.estimate = std::exp(est);
      row.upper = std::exp(hi);
    } else {
      row.lower = std::tanh(lo);
      row.estimate = std::tanh(est);
      row.upper = std::tanh(hi);
    }
    rows.push_back(row);
  }
  return rows;
}

bool FitResult::converged() const {
  return diagnostics.bfgs_theta_converged && diagnostics.bfgs_omega_converged &&
         diagnostics.hessian_negative_definite && diagnostics.nonconverged_groups == 0;
}

std::vector<GroupPrediction> predict_groups(const GroupedDataset& data, const Vector& beta,
                                            const Matrix& sigma, Method method, const EpOptions& ep,
                                            int aghq_order) {
  std::vector<GroupPrediction> out;
  out.reserve(data.groups.size());
  const NaturalParams prior = prior_message(sigma);
  for (const Group& g : data.groups) {
    GroupPrediction pred;
    pred.label = g.label;
    const LaplaceGroupFit lap = laplace_group(g, beta, sigma);
    switch (method) {
      case Method::EP: {
        const EPGroupState state = ep_group_loop(g, beta, prior, ep_start_sites(g, beta, lap.mode), ep);
        const BestPrediction bp = ep_best_predict(state);
        pred.mean = bp.mean;
        pred.cov = bp.cov;
        break;
      }
      case Method::Laplace: {
        const int d = static_cast<int>(lap.mode.size());
        pred.mean = lap.mode;
        pred.cov = Eigen::LLT<SmallMat>(lap.neg_hess).solve(SmallMat::Identity(d, d));
        break;
      }
      case Method::AGHQ: {
        const PosteriorMoments pm = aghq_posterior_moments(g, beta, sigma, aghq_order);
        pred.mean = pm.mean;
        pred.cov = pm.cov;
        break;
      }
    }
    out.push_back(std::move(pred));
  }
  return out;
}

FitResult optimize(const GroupedDataset& data, const FitConfig& config) {
  data.validate();
  const int df = data.dim_fixed;
  const int dr = data.dim_random;
  const int q = half_length(dr);
  LikelihoodEvaluator eval(data, config.method, config.ep, config.aghq_order, config.threads);
  FitResult fit;
  fit.method = config.method;
  auto& diag = fit.diagnostics;

  // BFGS needs a smooth objective, so the Laplace cache stays frozen within
  // each run and is refreshed between runs while the iterate keeps moving.
  auto run_bfgs = [&](Vector x, Parametrization par, int& iterations, bool& converged) {
    const Objective f = [&](const Vector& v) { return -eval.loglik(v, par); };
    iterations = 0;
    OptimResult res;
    for (int round = 0; round < 4; ++round) {
      Vector beta;
      Matrix sigma;
      unpack_params(x, df, dr, par, beta, sigma);
      eval.freeze_cache(false);
      eval.refresh_cache(beta, sigma);
      eval.freeze_cache(true);
      res = bfgs(f, x, config.bfgs);
      iterations += res.iterations;
      const bool moved = (res.x - x).cwiseAbs().maxCoeff() > LikelihoodEvaluator::cache_radius;
      x = res.x;
      if (!moved || !res.converged) break;
    }
    converged = res.converged;
    if (!res.converged) diag.warnings.push_back(std::string("BFGS: ") + res.message);
    return x;
  };

  // Stage 1: (beta, theta), Nelder-Mead then BFGS.
  Vector x(df + q);
  x << probit_irls(data), Vector::Zero(q);
  {
    eval.freeze_cache(false);
    const Objective f = [&](const Vector& v) { return -eval.loglik(v, Parametrization::Theta); };
    const OptimResult nm = nelder_mead(f, x, config.nelder_mead);
    diag.nm_evaluations = nm.evaluations;
    diag.nm_converged = nm.converged;
    if (std::isfinite(nm.value)) x = nm.x;
  }
  x = run_bfgs(x, Parametrization::Theta, diag.bfgs_theta_iterations, diag.bfgs_theta_converged);

  // Stage 2: (beta, omega) with the inner tolerance tightened.
  Vector beta = x.head(df);
  Matrix sigma = sigma_from_theta(x.tail(q));
  Vector y(df + q);
  y << beta, omega_from_sigma(sigma);
  EpOptions tight = config.ep;
  tight.tol = std::min(config.ep.tol, config.hessian_ep_tol);
  eval.set_ep_options(tight);
  y = run_bfgs(y, Parametrization::Omega, diag.bfgs_omega_iterations, diag.bfgs_omega_converged);

  unpack_params(y, df, dr, Parametrization::Omega, beta, sigma);
  eval.freeze_cache(false);
  eval.refresh_cache(beta, sigma);
  eval.freeze_cache(true);
  const Objective f_omega = [&](const Vector& v) { return eval.loglik(v, Parametrization::Omega); };
  fit.loglik = f_omega(y);
  diag.nonconverged_groups = eval.nonconverged_groups();
  diag.gradient_max_norm = central_gradient(f_omega, y).cwiseAbs().maxCoeff();
  fit.hessian_omega = central_hessian(f_omega, y);
  fit.hessian_omega = 0.5 * (fit.hessian_omega + fit.hessian_omega.transpose()).eval();
  diag.hessian_negative_definite =
      fit.hessian_omega.allFinite() && Eigen::LLT<Matrix>(-fit.hessian_omega).info() == Eigen::Success;
  if (!diag.hessian_negative_definite) diag.warnings.push_back("Hessian is not negative definite; intervals unreliable");
  diag.objective_evaluations = eval.evaluations();

  fit.beta = beta;
  fit.sigma = sigma;
  fit.omega = y.tail(q);
  fit.theta = theta_from_sigma(sigma);
  fit.ci = confidence_intervals(fit.hessian_omega, y, df, dr, config.alpha);
  try {
    fit.predictions = predict_groups(data, beta, sigma, config.method, tight, config.aghq_order);
  } catch (const NumericalError& e) {
    diag.warnings.push_back(std::string("prediction failed: ") + e.what());
  }
  return fit;
}

}  // namespace epglmm
