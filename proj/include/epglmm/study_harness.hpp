#pragma once

// Simulation designs, coverage experiments and likelihood-discrepancy sweeps.

#include "epglmm/dataset.hpp"
#include "epglmm/mle_driver.hpp"
#include "epglmm/types.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace epglmm {

/// xF = [1, x_1, .., x_{dF-1}] with x_k ~ U(0, 1) iid; xR = leading d^R entries of xF.
struct SimConfig {
  Vector beta;
  Matrix sigma;
  int m = 100;
  int n_min = 2;
  int n_max = 2;  // n_i ~ discrete U{n_min..n_max}
  std::uint64_t seed = 1;

  int dim_fixed() const { return static_cast<int>(beta.size()); }
  int dim_random() const { return static_cast<int>(sigma.rows()); }
  void validate() const;
};

/// beta = (0, 1), sigma^2 = 1, m = 100, n_i = 2.
SimConfig study1_config(std::uint64_t seed = 1);

/// Six fixed effects, bivariate random intercept and slope, n_i ~ U{20..30}.
SimConfig study2_config(std::uint64_t seed = 1, int m = 50);

/// Independent stream for (seed, replication, purpose).
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t replication, std::uint64_t purpose);

/// One dataset; replication r uses its own stream so replications are reproducible in any order.
GroupedDataset simulate(const SimConfig& config, std::uint64_t replication = 0);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Wilson score interval for a binomial proportion at normal quantile z.
Interval wilson_interval(int successes, int trials, double z);

struct ParameterCoverage {
  std::string name;
  double truth = 0.0;
  int replications = 0;
  int hits = 0;
  double coverage = 0.0;
  Interval wilson99;
  double mean_width = 0.0;
  double bias = 0.0;
};

struct Exclusion {
  int replication = 0;
  std::string reason;
};

struct MethodCoverage {
  Method method = Method::EP;
  int completed = 0;
  int nonconverged = 0;  // kept in the tallies, counted here for transparency
  std::vector<Exclusion> excluded;
  std::vector<ParameterCoverage> parameters;
  std::vector<double> fit_seconds;  // one per completed replication, in replication order
};

struct CoverageReport {
  int n_reps = 0;
  double alpha = 0.05;
  std::vector<MethodCoverage> methods;

  const MethodCoverage* find(Method m) const;
};

struct CoverageOptions {
  int n_reps = 300;
  double alpha = 0.05;
  std::vector<Method> methods{Method::EP};
  FitConfig fit{};
  int threads = 1;  // replications run in parallel, fits single-threaded
  std::function<void(int done, int total)> progress;
};

CoverageReport run_coverage(const SimConfig& config, const CoverageOptions& options);

/// True parameter values in CI-row order: beta, sigma_k, rho_kl (vecbd order).
Vector true_parameter_row(const SimConfig& config);

struct SweepRow {
  int n = 0;
  int groups = 0;
  int failures = 0;
  double mean = 0.0;
  double sd = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  double slope = 0.0;  // least-squares slope of log(mean) on log(n) over rows with n >= 2
};

/// Mean and sd of |l_i - l~_i| against adaptive quadrature, `reps` simulated
/// groups per n in n_grid. Requires d^R <= 2.
SweepTable discrepancy_sweep(const Vector& beta, const Matrix& sigma, const std::vector<int>& n_grid,
                             int reps, std::uint64_t seed = 1, const EpOptions& ep = {},
                             int aghq_order = 100);

}  // namespace epglmm
