#include "cli_commands.hpp"

#include "epglmm/dataset_io.hpp"
#include "epglmm/ep_engine.hpp"
#include "epglmm/matrix_kernels.hpp"
#include "epglmm/transforms.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace epglmm::cli {

namespace {

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

Json ci_rows_json(const std::vector<CiRow>& rows) {
  Json a = Json::array();
  for (const auto& r : rows) {
    a.push_back(Json{{"parameter", r.name}, {"lower", r.lower}, {"estimate", r.estimate},
                     {"upper", r.upper}, {"valid", r.valid}});
  }
  return a;
}

Json predictions_json(const std::vector<GroupPrediction>& preds) {
  Json a = Json::array();
  for (const auto& p : preds) a.push_back(Json{{"group", p.label}, {"mean", to_json(p.mean)}, {"cov", to_json(p.cov)}});
  return a;
}

std::string num(double v) { return format_double(v); }

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size() || !std::isfinite(v)) {
      throw std::invalid_argument(what + ": cannot parse '" + tok + "' as a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument(what + ": empty list");
  return out;
}

Matrix parse_sigma(const std::string& text) {
  const std::vector<double> vals = parse_list(text, "--sigma");
  const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(vals.size()))));
  if (d * d != static_cast<int>(vals.size())) {
    throw std::invalid_argument("--sigma: expected d*d row-major entries");
  }
  Matrix s(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) s(i, j) = vals[static_cast<std::size_t>(i * d + j)];
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 0.0) throw std::invalid_argument("--sigma: matrix is not symmetric");
  return s;
}

// Writes to `path` ("-" means the stream `out`).
void emit(const std::string& path, std::ostream& out, const std::function<void(std::ostream&)>& body) {
  if (path == "-") {
    body(out);
    out.flush();
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::invalid_argument("cannot open output file '" + path + "'");
  body(file);
  if (!file) throw std::runtime_error("failed writing '" + path + "'");
}

struct Settings {
  std::string input;
  std::string output = "-";
  std::string table;
  std::string format = "json";
  std::string sweep_mode = "fresh";
  std::string method = "ep";
  std::string methods = "ep,laplace";
  std::string beta;
  std::string sigma;
  std::string fit_path;
  std::string n_grid = "1,2,8,32";
  double alpha = 0.05;
  double tol = 1e-5;
  int max_iter = 100;
  int threads = 1;
  std::uint64_t seed = 1;
  int study = 1;
  int groups = 0;
  int n_min = 0;
  int n_max = 0;
  int reps = 0;
  int replication = 0;
  int aghq_order = 100;
  bool timings = false;

  EpOptions ep() const {
    EpOptions o;
    o.tol = tol;
    o.max_iter = max_iter;
    o.mode = sweep_mode == "literal" ? SweepMode::Literal : SweepMode::Fresh;
    return o;
  }

  FitConfig fit_config() const {
    FitConfig c;
    c.method = parse_method(method);
    c.ep = ep();
    c.alpha = alpha;
    c.threads = threads;
    c.aghq_order = aghq_order;
    return c;
  }

  SimConfig sim_config() const {
    SimConfig c = study == 2 ? study2_config(seed) : study1_config(seed);
    if (!beta.empty()) {
      const auto b = parse_list(beta, "--beta");
      c.beta = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    if (!sigma.empty()) c.sigma = parse_sigma(sigma);
    if (groups > 0) c.m = groups;
    if (n_min > 0) c.n_min = n_min;
    if (n_max > 0) c.n_max = n_max;
    if (c.n_max < c.n_min) c.n_max = c.n_min;
    c.validate();
    return c;
  }
};

Json settings_json(const Settings& s) {
  return Json{{"alpha", s.alpha}, {"tol", s.tol}, {"max_iter", s.max_iter}, {"sweep_mode", s.sweep_mode}};
}

int cmd_fit(const Settings& s, std::ostream& out, std::ostream& err) {
  const GroupedDataset data = read_dataset_csv_file(s.input);
  const FitConfig config = s.fit_config();
  const FitResult fit = optimize(data, config);
  Json report = fit_report(fit, data, config);
  report["settings"] = settings_json(s);
  emit(s.output, out, [&](std::ostream& os) {
    if (s.format == "tsv") {
      write_ci_table(os, fit.ci);
    } else {
      os << report.dump(2) << '\n';
    }
  });
  if (!s.table.empty()) emit(s.table, out, [&](std::ostream& os) { write_ci_table(os, fit.ci); });
  if (!fit.converged()) {
    err << "fit: not converged";
    for (const auto& w : fit.diagnostics.warnings) err << "; " << w;
    err << '\n';
    return kExitConvergence;
  }
  return kExitOk;
}

int cmd_simulate(const Settings& s, std::ostream& out) {
  const SimConfig config = s.sim_config();
  const GroupedDataset data = simulate(config, static_cast<std::uint64_t>(s.replication));
  emit(s.output, out, [&](std::ostream& os) { write_dataset_csv(os, data); });
  return kExitOk;
}

int cmd_coverage(const Settings& s, std::ostream& out, std::ostream& err) {
  const SimConfig config = s.sim_config();
  CoverageOptions options;
  options.n_reps = s.reps > 0 ? s.reps : 300;
  options.alpha = s.alpha;
  options.methods.clear();
  std::stringstream ss(s.methods);
  for (std::string tok; std::getline(ss, tok, ',');) options.methods.push_back(parse_method(tok));
  options.fit = s.fit_config();
  options.threads = s.threads;
  if (s.timings) {
    options.progress = [&](int done, int total) { err << "\rcoverage: " << done << "/" << total << std::flush; };
  }
  const CoverageReport report = run_coverage(config, options);
  if (s.timings) err << '\n';
  Json j = coverage_report(report, config, s.timings);
  j["settings"] = settings_json(s);
  j["seed"] = s.seed;
  emit(s.output, out, [&](std::ostream& os) {
    if (s.format == "tsv") {
      write_coverage_tsv(os, report);
    } else {
      os << j.dump(2) << '\n';
    }
  });
  return kExitOk;
}

int cmd_sweep(const Settings& s, std::ostream& out) {
  const SimConfig config = s.sim_config();
  std::vector<int> grid;
  for (double v : parse_list(s.n_grid, "--n-grid")) grid.push_back(static_cast<int>(v));
  const int reps = s.reps > 0 ? s.reps : 200;
  const SweepTable table = discrepancy_sweep(config.beta, config.sigma, grid, reps, s.seed, s.ep(), s.aghq_order);
  Json j = sweep_report(table, config.beta, config.sigma, reps);
  j["settings"] = settings_json(s);
  j["seed"] = s.seed;
  emit(s.output, out, [&](std::ostream& os) {
    if (s.format == "tsv") {
      write_sweep_tsv(os, table);
    } else {
      os << j.dump(2) << '\n';
    }
  });
  return kExitOk;
}

int cmd_predict(const Settings& s, std::ostream& out) {
  const GroupedDataset data = read_dataset_csv_file(s.input);
  Vector beta;
  Matrix sigma;
  if (!s.fit_path.empty()) {
    std::ifstream in(s.fit_path);
    if (!in) throw std::invalid_argument("cannot open fit report '" + s.fit_path + "'");
    Json j;
    try {
      j = Json::parse(in);
      const auto b = j.at("estimates").at("beta").get<std::vector<double>>();
      const auto rows = j.at("estimates").at("sigma").get<std::vector<std::vector<double>>>();
      beta = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
      sigma.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw std::invalid_argument("sigma is not square");
        for (std::size_t k = 0; k < rows.size(); ++k) sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("fit report '" + s.fit_path + "': " + e.what());
    }
  } else {
    if (s.beta.empty() || s.sigma.empty()) throw std::invalid_argument("predict: give --fit or both --beta and --sigma");
    const auto b = parse_list(s.beta, "--beta");
    beta = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    sigma = parse_sigma(s.sigma);
  }
  if (beta.size() != data.dim_fixed || sigma.rows() != data.dim_random) {
    throw std::invalid_argument("predict: parameter dimensions do not match the data");
  }
  const Method method = parse_method(s.method);
  const auto preds = predict_groups(data, beta, sigma, method, s.ep(), s.aghq_order);
  emit(s.output, out, [&](std::ostream& os) {
    if (s.format == "tsv") {
      write_predictions_tsv(os, preds);
    } else {
      Json j = predictions_report(preds, beta, sigma, method);
      j["settings"] = settings_json(s);
      os << j.dump(2) << '\n';
    }
  });
  return kExitOk;
}

}  // namespace

Json fit_report(const FitResult& fit, const GroupedDataset& data, const FitConfig& config) {
  const auto& d = fit.diagnostics;
  Json diag{{"converged", fit.converged()},
            {"nelder_mead_evaluations", d.nm_evaluations},
            {"nelder_mead_converged", d.nm_converged},
            {"bfgs_theta_iterations", d.bfgs_theta_iterations},
            {"bfgs_theta_converged", d.bfgs_theta_converged},
            {"bfgs_omega_iterations", d.bfgs_omega_iterations},
            {"bfgs_omega_converged", d.bfgs_omega_converged},
            {"objective_evaluations", d.objective_evaluations},
            {"gradient_max_norm", d.gradient_max_norm},
            {"hessian_negative_definite", d.hessian_negative_definite},
            {"nonconverged_groups", d.nonconverged_groups},
            {"warnings", d.warnings}};
  return Json{{"schema", kSchemaVersion},
              {"command", "fit"},
              {"method", method_name(config.method)},
              {"data",
               Json{{"groups", data.num_groups()},
                    {"observations", data.num_observations()},
                    {"dim_fixed", data.dim_fixed},
                    {"dim_random", data.dim_random}}},
              {"loglik", fit.loglik},
              {"estimates",
               Json{{"beta", to_json(fit.beta)},
                    {"sigma", to_json(fit.sigma)},
                    {"theta", to_json(fit.theta)},
                    {"omega", to_json(fit.omega)}}},
              {"ci", ci_rows_json(fit.ci)},
              {"hessian_omega", to_json(fit.hessian_omega)},
              {"predictions", predictions_json(fit.predictions)},
              {"diagnostics", diag}};
}

Json predictions_report(const std::vector<GroupPrediction>& preds, const Vector& beta, const Matrix& sigma,
                        Method method) {
  return Json{{"schema", kSchemaVersion},
              {"command", "predict"},
              {"method", method_name(method)},
              {"beta", to_json(beta)},
              {"sigma", to_json(sigma)},
              {"predictions", predictions_json(preds)}};
}

Json coverage_report(const CoverageReport& report, const SimConfig& config, bool with_timings) {
  Json methods = Json::array();
  for (const auto& mc : report.methods) {
    Json params = Json::array();
    for (const auto& pc : mc.parameters) {
      params.push_back(Json{{"parameter", pc.name},
                            {"truth", pc.truth},
                            {"replications", pc.replications},
                            {"hits", pc.hits},
                            {"coverage", pc.coverage},
                            {"wilson99", Json::array({pc.wilson99.lower, pc.wilson99.upper})},
                            {"mean_width", pc.mean_width},
                            {"bias", pc.bias}});
    }
    Json excluded = Json::array();
    for (const auto& e : mc.excluded) excluded.push_back(Json{{"replication", e.replication}, {"reason", e.reason}});
    Json entry{{"method", method_name(mc.method)},
               {"completed", mc.completed},
               {"nonconverged", mc.nonconverged},
               {"excluded", excluded},
               {"parameters", params}};
    if (with_timings && !mc.fit_seconds.empty()) {
      std::vector<double> t = mc.fit_seconds;
      std::sort(t.begin(), t.end());
      auto quantile = [&](double q) { return t[static_cast<std::size_t>(q * (t.size() - 1) + 0.5)]; };
      entry["fit_seconds"] = Json{{"median", quantile(0.5)}, {"q90", quantile(0.9)}, {"max", t.back()}};
    }
    methods.push_back(entry);
  }
  return Json{{"schema", kSchemaVersion},
              {"command", "coverage"},
              {"replications", report.n_reps},
              {"alpha", report.alpha},
              {"design",
               Json{{"beta", to_json(config.beta)},
                    {"sigma", to_json(config.sigma)},
                    {"groups", config.m},
                    {"n_min", config.n_min},
                    {"n_max", config.n_max}}},
              {"methods", methods}};
}

Json sweep_report(const SweepTable& table, const Vector& beta, const Matrix& sigma, int reps) {
  Json rows = Json::array();
  for (const auto& r : table.rows) {
    rows.push_back(Json{{"n", r.n}, {"groups", r.groups}, {"failures", r.failures}, {"mean", r.mean}, {"sd", r.sd}});
  }
  return Json{{"schema", kSchemaVersion},
              {"command", "sweep"},
              {"beta", to_json(beta)},
              {"sigma", to_json(sigma)},
              {"reps", reps},
              {"rows", rows},
              {"log_log_slope", table.slope}};
}

void write_ci_table(std::ostream& out, const std::vector<CiRow>& rows) {
  out << "parameter\tci_lower\testimate\tci_upper\n";
  for (const auto& r : rows) {
    out << r.name << '\t' << (r.valid ? num(r.lower) : "NA") << '\t' << num(r.estimate) << '\t'
        << (r.valid ? num(r.upper) : "NA") << '\n';
  }
}

void write_predictions_tsv(std::ostream& out, const std::vector<GroupPrediction>& preds) {
  if (preds.empty()) return;
  const int d = static_cast<int>(preds.front().mean.size());
  out << "group";
  for (int k = 0; k < d; ++k) out << "\tmean" << k + 1;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) out << "\tcov" << i + 1 << j + 1;
  out << '\n';
  for (const auto& p : preds) {
    out << p.label;
    for (int k = 0; k < d; ++k) out << '\t' << num(p.mean[k]);
    for (int j = 0; j < d; ++j)
      for (int i = j; i < d; ++i) out << '\t' << num(p.cov(i, j));
    out << '\n';
  }
}

void write_coverage_tsv(std::ostream& out, const CoverageReport& report) {
  out << "method\tparameter\ttruth\treplications\thits\tcoverage\twilson99_lower\twilson99_upper\tmean_width\tbias\n";
  for (const auto& mc : report.methods) {
    for (const auto& pc : mc.parameters) {
      out << method_name(mc.method) << '\t' << pc.name << '\t' << num(pc.truth) << '\t' << pc.replications << '\t'
          << pc.hits << '\t' << num(pc.coverage) << '\t' << num(pc.wilson99.lower) << '\t' << num(pc.wilson99.upper)
          << '\t' << num(pc.mean_width) << '\t' << num(pc.bias) << '\n';
    }
  }
}

void write_sweep_tsv(std::ostream& out, const SweepTable& table) {
  out << "n\tgroups\tfailures\tmean_abs_discrepancy\tsd\n";
  for (const auto& r : table.rows) {
    out << r.n << '\t' << r.groups << '\t' << r.failures << '\t' << num(r.mean) << '\t' << num(r.sd) << '\n';
  }
  out << "# log_log_slope\t" << num(table.slope) << '\n';
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Probit mixed models by expectation propagation"};
  app.require_subcommand(1);
  Settings s;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-o,--output", s.output, "Output path ('-' for stdout)");
    sub->add_option("--alpha", s.alpha, "Interval level is 100(1 - alpha)%")->check(CLI::Range(1e-12, 1.0 - 1e-12));
    sub->add_option("--tol", s.tol, "Inner relative tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--max-iter", s.max_iter, "Inner sweep limit")->check(CLI::PositiveNumber);
    sub->add_option("--threads", s.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", s.seed, "Random seed");
    sub->add_option("--format", s.format, "Report format")->check(CLI::IsMember({"json", "tsv"}));
    sub->add_option("--sweep-mode", s.sweep_mode, "Site update schedule")->check(CLI::IsMember({"fresh", "literal"}));
    sub->add_option("--aghq-order", s.aghq_order, "Quadrature points per dimension")->check(CLI::PositiveNumber);
  };
  auto design = [&](CLI::App* sub) {
    sub->add_option("--study", s.study, "Built-in design (1 or 2)")->check(CLI::IsMember({1, 2}));
    sub->add_option("--beta", s.beta, "Comma-separated fixed effects");
    sub->add_option("--sigma", s.sigma, "Row-major comma-separated covariance");
    sub->add_option("--groups", s.groups, "Number of groups")->check(CLI::PositiveNumber);
    sub->add_option("--n-min", s.n_min, "Smallest group size")->check(CLI::PositiveNumber);
    sub->add_option("--n-max", s.n_max, "Largest group size")->check(CLI::PositiveNumber);
  };

  CLI::App* fit = app.add_subcommand("fit", "Fit a model to a CSV dataset");
  common(fit);
  fit->add_option("-i,--input", s.input, "Dataset CSV")->required();
  fit->add_option("--method", s.method, "ep, laplace or aghq")->check(CLI::IsMember({"ep", "laplace", "aghq"}));
  fit->add_option("--table", s.table, "Also write the interval table (TSV) here");

  CLI::App* sim = app.add_subcommand("simulate", "Simulate a dataset");
  common(sim);
  design(sim);
  sim->add_option("--replication", s.replication, "Replication index");

  CLI::App* cov = app.add_subcommand("coverage", "Confidence-interval coverage experiment");
  common(cov);
  design(cov);
  cov->add_option("--reps", s.reps, "Replications (default 300)")->check(CLI::PositiveNumber);
  cov->add_option("--methods", s.methods, "Comma-separated methods");
  cov->add_flag("--timings", s.timings, "Report fit times and progress (non-deterministic output)");

  CLI::App* sweep = app.add_subcommand("sweep", "Likelihood discrepancy against quadrature");
  common(sweep);
  design(sweep);
  sweep->add_option("--n-grid", s.n_grid, "Comma-separated group sizes");
  sweep->add_option("--reps", s.reps, "Groups per size (default 200)")->check(CLI::PositiveNumber);

  CLI::App* pred = app.add_subcommand("predict", "Random-effect best predictions");
  common(pred);
  pred->add_option("-i,--input", s.input, "Dataset CSV")->required();
  pred->add_option("--fit", s.fit_path, "Fit report JSON supplying beta and Sigma");
  pred->add_option("--beta", s.beta, "Comma-separated fixed effects");
  pred->add_option("--sigma", s.sigma, "Row-major comma-separated covariance");
  pred->add_option("--method", s.method, "ep, laplace or aghq")->check(CLI::IsMember({"ep", "laplace", "aghq"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*fit) return cmd_fit(s, out, err);
    if (*sim) return cmd_simulate(s, out);
    if (*cov) return cmd_coverage(s, out, err);
    if (*sweep) return cmd_sweep(s, out);
    if (*pred) return cmd_predict(s, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitConvergence;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace epglmm::cli
