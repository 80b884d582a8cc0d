#pragma once

// Command-line front end: subcommands fit, simulate, coverage, sweep and
// predict. Exit codes: 0 success, 2 input error, 3 convergence failure,
// 4 internal error.

#include "epglmm/mle_driver.hpp"
#include "epglmm/study_harness.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace epglmm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitConvergence = 3;
inline constexpr int kExitInternal = 4;

inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::ordered_json;

Json fit_report(const FitResult& fit, const GroupedDataset& data, const FitConfig& config);
Json predictions_report(const std::vector<GroupPrediction>& preds, const Vector& beta, const Matrix& sigma,
                        Method method);
Json coverage_report(const CoverageReport& report, const SimConfig& config, bool with_timings);
Json sweep_report(const SweepTable& table, const Vector& beta, const Matrix& sigma, int reps);

void write_ci_table(std::ostream& out, const std::vector<CiRow>& rows);
void write_predictions_tsv(std::ostream& out, const std::vector<GroupPrediction>& preds);
void write_coverage_tsv(std::ostream& out, const CoverageReport& report);
void write_sweep_tsv(std::ostream& out, const SweepTable& table);

/// Parses argv and runs the chosen subcommand. Diagnostics go to `err`;
/// reports go to the requested output file or `out` for "-".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace epglmm::cli
