#pragma once

// Maximum likelihood for the probit mixed model: likelihood evaluation by
// expectation propagation (or the Laplace / adaptive-quadrature baselines),
// two-stage optimization, Hessian-based confidence intervals and random-effect
// best prediction.

#include "epglmm/dataset.hpp"
#include "epglmm/ep_engine.hpp"
#include "epglmm/optimizers.hpp"
#include "epglmm/types.hpp"

#include <string>
#include <vector>

namespace epglmm {

enum class Method { EP, Laplace, AGHQ };

const char* method_name(Method m);
Method parse_method(const std::string& name);

enum class Parametrization { Theta, Omega };

/// Approximate (or exact-by-quadrature) log-likelihood of a grouped dataset.
///
/// EP starting values come from Laplace predictions cached per group. The
/// cache is refreshed when (beta, vech Sigma) has moved more than
/// `cache_radius` in max-norm since it was filled, unless frozen.
class LikelihoodEvaluator {
 public:
  LikelihoodEvaluator(const GroupedDataset& data, Method method, EpOptions ep = {},
                      int aghq_order = 100, int threads = 1);

  /// Sum of per-group contributions; -infinity when any EP group fails to converge.
  double loglik(const Vector& beta, const Matrix& sigma);

  /// params = [beta, theta] or [beta, omega].
  double loglik(const Vector& params, Parametrization par);

  std::vector<double> group_logliks(const Vector& beta, const Matrix& sigma);

  void set_ep_options(const EpOptions& ep) { ep_ = ep; }
  const EpOptions& ep_options() const { return ep_; }
  void freeze_cache(bool frozen) { frozen_ = frozen; }

  /// Fills the Laplace cache at (beta, sigma) regardless of the radius rule.
  void refresh_cache(const Vector& beta, const Matrix& sigma);

  int evaluations() const { return evaluations_; }
  int nonconverged_groups() const { return last_nonconverged_; }
  const GroupedDataset& data() const { return data_; }
  Method method() const { return method_; }

  static constexpr double cache_radius = 1e-2;

 private:
  double group_term(int i, const Vector& beta, const Matrix& sigma, const NaturalParams& prior,
                    bool& ok) const;
  void maybe_refresh(const Vector& beta, const Matrix& sigma);

  const GroupedDataset& data_;
  Method method_;
  EpOptions ep_;
  int aghq_order_;
  int threads_;
  bool frozen_ = false;
  bool cache_valid_ = false;
  Vector cache_key_;
  std::vector<SmallVec> modes_;
  int evaluations_ = 0;
  int last_nonconverged_ = 0;
};

/// Splits params into beta (first d^F) and Sigma.
void unpack_params(const Vector& params, int dim_fixed, int dim_random, Parametrization par,
                   Vector& beta, Matrix& sigma);

/// Probit regression ignoring random effects, by iteratively reweighted least squares.
Vector probit_irls(const GroupedDataset& data, int max_iter = 25);

struct CiRow {
  std::string name;
  double lower = 0.0;
  double estimate = 0.0;
  double upper = 0.0;
  bool valid = false;
};

/// Rows beta0.., sigma1.., rho<kl>.. built from estimates = [beta, omega]
/// and the Hessian H of the log-likelihood in (beta, omega). Intervals are
/// estimate +- Phi^{-1}(1 - alpha/2) sqrt(-diag(H^{-1})) in (beta, omega),
/// mapped through exp for sigma rows and tanh for rho rows. Rows whose
/// variance is not positive are returned with valid == false and NaN bounds.
std::vector<CiRow> confidence_intervals(const Matrix& hessian, const Vector& estimates,
                                        int dim_fixed, int dim_random, double alpha);

std::vector<std::string> parameter_names(int dim_fixed, int dim_random);

struct GroupPrediction {
  std::string label;
  Vector mean;
  Matrix cov;
};

struct FitConfig {
  Method method = Method::EP;
  EpOptions ep{};
  double hessian_ep_tol = 1e-8;
  double alpha = 0.05;
  int aghq_order = 100;
  int threads = 1;
  NelderMeadOptions nelder_mead{};
  BfgsOptions bfgs{};
};

struct FitDiagnostics {
  int nm_evaluations = 0;
  bool nm_converged = false;
  int bfgs_theta_iterations = 0;
  bool bfgs_theta_converged = false;
  int bfgs_omega_iterations = 0;
  bool bfgs_omega_converged = false;
  int objective_evaluations = 0;
  double gradient_max_norm = 0.0;
  bool hessian_negative_definite = false;
  int nonconverged_groups = 0;
  std::vector<std::string> warnings;
};

struct FitResult {
  Method method = Method::EP;
  Vector beta;
  Matrix sigma;
  Vector theta;
  Vector omega;
  Matrix hessian_omega;
  std::vector<CiRow> ci;
  double loglik = 0.0;
  std::vector<GroupPrediction> predictions;
  FitDiagnostics diagnostics;

  /// Both optimization stages converged and the Hessian is negative definite.
  bool converged() const;
};

FitResult optimize(const GroupedDataset& data, const FitConfig& config = {});

/// Per-group best predictions at fixed (beta, Sigma).
std::vector<GroupPrediction> predict_groups(const GroupedDataset& data, const Vector& beta,
                                            const Matrix& sigma, Method method,
                                            const EpOptions& ep = {}, int aghq_order = 100);

}  // namespace epglmm
