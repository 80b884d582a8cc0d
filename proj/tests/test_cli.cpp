#include "cli_commands.hpp"

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using epglmm::cli::Json;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("epglmm_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the installed binary as a separate process.
Outcome run_binary(const Scratch& s, const std::string& args) {
  const std::string out = s.path("stdout.txt");
  const std::string err = s.path("stderr.txt");
  const std::string cmd = std::string("\"") + EPGLMM_CLI_PATH + "\" " + args + " > \"" + out + "\" 2> \"" + err + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

Outcome run_inprocess(std::vector<std::string> args) {
  args.insert(args.begin(), "epglmm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Outcome o;
  o.code = epglmm::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

void key_paths(const Json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string p = prefix.empty() ? it.key() : prefix + "." + it.key();
      out.push_back(p);
      key_paths(it.value(), p, out);
    }
  } else if (j.is_array() && !j.empty() && j.front().is_object()) {
    key_paths(j.front(), prefix + "[]", out);
  }
}

}  // namespace

TEST_CASE("fit report matches the golden schema") {
  Scratch s;
  const Outcome sim = run_inprocess({"simulate", "--study", "1", "--seed", "11", "-o", s.path("d.csv")});
  REQUIRE(sim.code == 0);
  const Outcome fit = run_inprocess({"fit", "-i", s.path("d.csv"), "--table", s.path("ci.tsv")});
  REQUIRE(fit.code == 0);
  const Json report = Json::parse(fit.out);
  std::vector<std::string> paths;
  key_paths(report, "", paths);
  const auto golden = Json::parse(slurp(std::string(EPGLMM_GOLDEN_DIR) + "/fit_schema.json")).get<std::vector<std::string>>();
  CHECK(paths == golden);
  CHECK(report["schema"] == epglmm::cli::kSchemaVersion);
  CHECK(report["ci"].size() == 3);
  CHECK(report["predictions"].size() == 100);

  const std::string table = slurp(s.path("ci.tsv"));
  CHECK(table.rfind("parameter\tci_lower\testimate\tci_upper\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK(table.find("\nsigma1\t") != std::string::npos);

  // The report feeds back into predict.
  std::ofstream(s.path("fit.json")) << fit.out;
  const Outcome pred = run_inprocess({"predict", "-i", s.path("d.csv"), "--fit", s.path("fit.json"), "--format", "tsv"});
  REQUIRE(pred.code == 0);
  CHECK(pred.out.rfind("group\tmean1\tcov11\ng1\t", 0) == 0);
}

TEST_CASE("one-row dataset") {
  Scratch s;
  const std::string csv = s.write("one.csv", "group,y,xF1,xR1\na,1,1,1\n");
  const Outcome pred = run_inprocess({"predict", "-i", csv, "--beta", "0", "--sigma", "1"});
  REQUIRE(pred.code == 0);
  const Json j = Json::parse(pred.out);
  // u ~ N(0, 1) given Phi(u) observed: mean phi(0)/Phi(0)/sqrt 2, variance 1 - 1/pi.
  const double mean = j["predictions"][0]["mean"][0];
  const double var = j["predictions"][0]["cov"][0][0];
  CHECK(mean == doctest::Approx(1.0 / std::sqrt(std::numbers::pi)).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0 - 1.0 / std::numbers::pi).epsilon(1e-12));

  // A single observation cannot identify (beta, Sigma): the report is still
  // written and the exit code flags the failure.
  const Outcome fit = run_inprocess({"fit", "-i", csv});
  CHECK(fit.code == epglmm::cli::kExitConvergence);
  CHECK(Json::parse(fit.out)["diagnostics"]["converged"] == false);
  CHECK(fit.err.find("not converged") != std::string::npos);
}

TEST_CASE("input errors cite the offending line") {
  Scratch s;
  const std::string bad = s.write("bad.csv", "group,y,xF1,xR1\na,1,1,1\na,2,1,1\n");
  const Outcome o = run_binary(s, "fit -i \"" + bad + "\"");
  CHECK(o.code == 2);
  CHECK(o.err.find("bad.csv:3:") != std::string::npos);
  CHECK(o.out.empty());

  const std::string header = s.write("hdr.csv", "grp,y,xF1,xR1\n");
  CHECK(run_binary(s, "fit -i \"" + header + "\"").code == 2);
  CHECK(run_binary(s, "fit -i \"" + s.path("missing.csv") + "\"").code == 2);
  CHECK(run_binary(s, "simulate --sigma 1,2,3").code == 2);
  CHECK(run_binary(s, "simulate --sigma -1").code == 2);
  CHECK(run_binary(s, "fit").code == 2);
  CHECK(run_binary(s, "frobnicate").code == 2);
  CHECK(run_binary(s, "--help").code == 0);
}

TEST_CASE("deterministic output") {
  Scratch s;
  const std::string args = "simulate --study 2 --groups 5 --seed 7 --replication 3";
  const Outcome a = run_binary(s, args);
  const Outcome b = run_binary(s, args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.rfind("group,y,xF1,xF2,xF3,xF4,xF5,xF6,xR1,xR2\n", 0) == 0);
  CHECK(run_binary(s, "simulate --study 2 --groups 5 --seed 8 --replication 3").out != a.out);

  const std::string sweep = "sweep --n-grid 1,2 --reps 5 --format tsv";
  const Outcome c = run_binary(s, sweep);
  REQUIRE(c.code == 0);
  CHECK(c.out == run_binary(s, sweep).out);
  CHECK(c.out.rfind("n\tgroups\tfailures\tmean_abs_discrepancy\tsd\n1\t5\t0\t", 0) == 0);

  const std::string cov = "coverage --reps 2 --methods laplace";
  const Outcome d = run_binary(s, cov);
  REQUIRE(d.code == 0);
  CHECK(d.out == run_binary(s, cov).out);
  CHECK(Json::parse(d.out)["methods"][0].contains("fit_seconds") == false);
}

TEST_CASE("simulated CSV round-trips through the reader") {
  Scratch s;
  const Outcome a = run_inprocess({"simulate", "--study", "2", "--groups", "3", "-o", s.path("a.csv")});
  REQUIRE(a.code == 0);
  const Outcome p = run_inprocess({"predict", "-i", s.path("a.csv"), "--beta", "0.37,0.93,-0.46,0.08,-1.34,1.09",
                                   "--sigma", "0.53,-0.36,-0.36,0.92", "--format", "tsv"});
  REQUIRE(p.code == 0);
  CHECK(p.out.rfind("group\tmean1\tmean2\tcov11\tcov21\tcov22\n", 0) == 0);
  CHECK(std::count(p.out.begin(), p.out.end(), '\n') == 4);
  const Outcome mismatch = run_inprocess({"predict", "-i", s.path("a.csv"), "--beta", "0", "--sigma", "1"});
  CHECK(mismatch.code == 2);
}
