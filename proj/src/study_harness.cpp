#include "epglmm/study_harness.hpp"

#include "epglmm/ep_engine.hpp"
#include "epglmm/probit_special.hpp"
#include "epglmm/reference_oracles.hpp"
#include "epglmm/transforms.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace epglmm {

void SimConfig::validate() const {
  if (beta.size() < 1) throw std::invalid_argument("simulation: beta must be nonempty");
  const int d = dim_random();
  if (d < 1 || sigma.cols() != d || d > dim_fixed()) {
    throw std::invalid_argument("simulation: Sigma must be square with d^R <= d^F");
  }
  if (Eigen::LLT<Matrix>(sigma).info() != Eigen::Success || !sigma.isApprox(sigma.transpose())) {
    throw std::invalid_argument("simulation: Sigma must be symmetric positive definite");
  }
  if (m < 1 || n_min < 1 || n_max < n_min) throw std::invalid_argument("simulation: need m >= 1 and 1 <= n_min <= n_max");
}

SimConfig study1_config(std::uint64_t seed) {
  SimConfig c;
  c.beta = Vector::Zero(2);
  c.beta << 0.0, 1.0;
  c.sigma = Matrix::Identity(1, 1);
  c.m = 100;
  c.n_min = c.n_max = 2;
  c.seed = seed;
  return c;
}

SimConfig study2_config(std::uint64_t seed, int m) {
  SimConfig c;
  c.beta = Vector(6);
  c.beta << 0.37, 0.93, -0.46, 0.08, -1.34, 1.09;
  c.sigma = Matrix(2, 2);
  c.sigma << 0.53, -0.36, -0.36, 0.92;
  c.m = m;
  c.n_min = 20;
  c.n_max = 30;
  c.seed = seed;
  return c;
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t replication, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replication), static_cast<std::uint32_t>(replication >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

GroupedDataset simulate(const SimConfig& config, std::uint64_t replication) {
  config.validate();
  const int df = config.dim_fixed();
  const int dr = config.dim_random();
  std::mt19937_64 rng = make_stream(config.seed, replication, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> size_dist(config.n_min, config.n_max);
  const Matrix chol = Eigen::LLT<Matrix>(config.sigma).matrixL();

  GroupedDataset data;
  data.dim_fixed = df;
  data.dim_random = dr;
  data.groups.reserve(config.m);
  for (int i = 0; i < config.m; ++i) {
    Group g;
    g.label = "g" + std::to_string(i + 1);
    const int n = size_dist(rng);
    Vector z(dr);
    for (int k = 0; k < dr; ++k) z[k] = normal(rng);
    const Vector u = chol * z;
    g.xf.resize(n, df);
    g.xr.resize(n, dr);
    g.y.resize(n);
    for (int j = 0; j < n; ++j) {
      g.xf(j, 0) = 1.0;
      for (int k = 1; k < df; ++k) g.xf(j, k) = unif(rng);
      g.xr.row(j) = g.xf.row(j).head(dr);
      const double eta = g.xf.row(j).dot(config.beta) + g.xr.row(j).dot(u);
      g.y[j] = unif(rng) < std_normal_cdf(eta) ? 1 : 0;
    }
    data.groups.push_back(std::move(g));
  }
  return data;
}

Interval wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  // The bounds at p = 0 and p = 1 are exactly 0 and 1; rounding must not move them.
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half),
          successes == trials ? 1.0 : std::min(1.0, centre + half)};
}

const MethodCoverage* CoverageReport::find(Method m) const {
  for (const auto& mc : methods)
    if (mc.method == m) return &mc;
  return nullptr;
}

Vector true_parameter_row(const SimConfig& config) {
  const Vector sc = sd_corr_from_sigma(config.sigma);
  Vector out(config.beta.size() + sc.size());
  out << config.beta, sc;
  return out;
}

namespace {

struct ReplicationOutcome {
  bool ok = false;
  bool converged = false;
  std::string reason;
  std::vector<CiRow> ci;
  double seconds = 0.0;
};

ReplicationOutcome run_one(const SimConfig& config, int rep, Method method, FitConfig fit_config) {
  ReplicationOutcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    const GroupedDataset data = simulate(config, static_cast<std::uint64_t>(rep));
    fit_config.method = method;
    fit_config.threads = 1;
    const FitResult fit = optimize(data, fit_config);
    out.ci = fit.ci;
    out.converged = fit.converged();
    out.ok = std::all_of(fit.ci.begin(), fit.ci.end(), [](const CiRow& r) { return r.valid; });
    if (!out.ok) out.reason = "no finite interval for at least one parameter";
  } catch (const std::exception& e) {
    out.reason = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

CoverageReport run_coverage(const SimConfig& config, const CoverageOptions& options) {
  config.validate();
  CoverageReport report;
  report.n_reps = std::max(options.n_reps, 0);
  report.alpha = options.alpha;
  const Vector truth = true_parameter_row(config);
  const std::vector<std::string> names = parameter_names(config.dim_fixed(), config.dim_random());
  const double z99 = std_normal_quantile(0.995);

  const int n_methods = static_cast<int>(options.methods.size());
  const int total = report.n_reps * n_methods;
  std::vector<ReplicationOutcome> outcomes(total);
  int done = 0;
  std::mutex progress_mutex;
  auto work = [&](int task) {
    const int mi = task % n_methods;
    const int rep = task / n_methods;
    outcomes[task] = run_one(config, rep, options.methods[mi], options.fit);
    if (options.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      options.progress(++done, total);
    }
  };
  const int workers = std::clamp(options.threads, 1, std::max(total, 1));
  if (workers == 1) {
    for (int t = 0; t < total; ++t) work(t);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int t = w; t < total; t += workers) work(t);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (int mi = 0; mi < n_methods; ++mi) {
    MethodCoverage mc;
    mc.method = options.methods[mi];
    mc.parameters.resize(names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
      mc.parameters[k].name = names[k];
      mc.parameters[k].truth = truth[static_cast<Eigen::Index>(k)];
    }
    for (int rep = 0; rep < report.n_reps; ++rep) {
      const ReplicationOutcome& o = outcomes[rep * n_methods + mi];
      if (!o.ok) {
        mc.excluded.push_back({rep, o.reason});
        continue;
      }
      ++mc.completed;
      if (!o.converged) ++mc.nonconverged;
      mc.fit_seconds.push_back(o.seconds);
      for (std::size_t k = 0; k < names.size(); ++k) {
        auto& pc = mc.parameters[k];
        const CiRow& row = o.ci[k];
        ++pc.replications;
        if (row.lower <= pc.truth && pc.truth <= row.upper) ++pc.hits;
        pc.mean_width += row.upper - row.lower;
        pc.bias += row.estimate - pc.truth;
      }
    }
    for (auto& pc : mc.parameters) {
      if (pc.replications > 0) {
        pc.coverage = static_cast<double>(pc.hits) / pc.replications;
        pc.mean_width /= pc.replications;
        pc.bias /= pc.replications;
      }
      pc.wilson99 = wilson_interval(pc.hits, pc.replications, z99);
    }
    report.methods.push_back(std::move(mc));
  }
  return report;
}

SweepTable discrepancy_sweep(const Vector& beta, const Matrix& sigma, const std::vector<int>& n_grid,
                             int reps, std::uint64_t seed, const EpOptions& ep, int aghq_order) {
  if (sigma.rows() > 2) throw std::invalid_argument("discrepancy sweep needs d^R <= 2 for the quadrature oracle");
  if (reps < 1) throw std::invalid_argument("discrepancy sweep needs reps >= 1");
  SweepTable table;
  std::vector<double> log_n;
  std::vector<double> log_mean;
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    const int n = n_grid[k];
    if (n < 1) throw std::invalid_argument("discrepancy sweep: group sizes must be >= 1");
    SimConfig config;
    config.beta = beta;
    config.sigma = sigma;
    config.m = reps;
    config.n_min = config.n_max = n;
    config.seed = seed;
    const GroupedDataset data = simulate(config, static_cast<std::uint64_t>(k));
    const NaturalParams prior = prior_message(sigma);
    std::vector<double> gaps;
    SweepRow row;
    row.n = n;
    for (const Group& g : data.groups) {
      const LaplaceGroupFit lap = laplace_group(g, beta, sigma);
      try {
        const EPGroupState state = ep_group_loop(g, beta, prior, ep_start_sites(g, beta, lap.mode), ep);
        if (!state.converged) {
          ++row.failures;
          continue;
        }
        gaps.push_back(std::abs(aghq_group_loglik(g, beta, sigma, aghq_order) - ep_group_loglik(state)));
      } catch (const NumericalError&) {
        ++row.failures;
      }
    }
    row.groups = static_cast<int>(gaps.size());
    if (!gaps.empty()) {
      double s = 0.0;
      for (double v : gaps) s += v;
      row.mean = s / gaps.size();
      double ss = 0.0;
      for (double v : gaps) ss += (v - row.mean) * (v - row.mean);
      row.sd = gaps.size() > 1 ? std::sqrt(ss / (gaps.size() - 1)) : 0.0;
    }
    if (n >= 2 && row.mean > 0.0) {
      log_n.push_back(std::log(static_cast<double>(n)));
      log_mean.push_back(std::log(row.mean));
    }
    table.rows.push_back(row);
  }
  if (log_n.size() >= 2) {
    const double k = static_cast<double>(log_n.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
      mx += log_n[i] / k;
      my += log_mean[i] / k;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
      sxy += (log_n[i] - mx) * (log_mean[i] - my);
      sxx += (log_n[i] - mx) * (log_n[i] - mx);
    }
    table.slope = sxy / sxx;
  } else {
    table.slope = std::numeric_limits<double>::quiet_NaN();
  }
  return table;
}

}  // namespace epglmm
