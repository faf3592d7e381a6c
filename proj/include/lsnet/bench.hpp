#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "lsnet/curves.hpp"
#include "lsnet/model.hpp"

namespace lsnet {

struct BenchmarkConfig {
  int n_test = 100;
  int iterations = 15;
  /// Root of the held-out instance seeds; test instances draw from a stream
  /// disjoint from the training generator.
  std::uint64_t seed = 0;
  double sigma = 0.1;
  std::vector<double> lambda0s = {1e-4, 1e-3, 1e-2};
  ClassicalConfig classical;
  double epsilon = kDefaultEarlyExit;
  int threads = 1;

  void validate() const;
};

/// Held-out instance i; families cycle through kAllCurveTags.
CurveInstance benchmark_instance(std::uint64_t root_seed, int index, double sigma = 0.1);

struct BenchmarkRow {
  std::uint64_t seed;
  std::string family;
  int iteration;
  std::string method;
  double objective;
  double param_err_l1;
  double wall_ms;  // cumulative up to this iteration
};

/// "lm(1e-03)" style label for an LM run with initial damping lambda0.
std::string lm_method_name(double lambda0);
inline constexpr const char* kLsNetMethod = "lsnet";

inline constexpr std::array<int, 4> kSummaryIterations = {1, 5, 10, 15};

struct MethodSummary {
  std::string method;
  std::vector<double> median_objective;  // one per kSummaryIterations entry
};

struct BenchmarkSummary {
  std::vector<MethodSummary> methods;
  /// LM configuration with the lowest median objective at iteration 5 and 15.
  std::string best_lm_at_5;
  std::string best_lm_at_15;
  /// Fraction of instances where LS-Net is strictly below that LM run.
  double win_rate_5 = 0.0;
  double win_rate_15 = 0.0;
  bool has_lsnet = false;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;
  BenchmarkSummary summary;
};

/// LM for every lambda0 and, when model is non-null, the learned solver, all
/// from the family midpoint. Rows are ordered by instance, method, iteration.
BenchmarkResult run_benchmark(const MetaModel* model, const BenchmarkConfig& config);

void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows);
void write_benchmark_summary(std::ostream& os, const BenchmarkSummary& summary);

/// Per-iteration cost of both stereo solvers at one resolution.
struct TimingPoint {
  int width;
  int height;
  Index pixels;
  double lm_ms;     // linearisation, normal equations and one damped solve
  double lsnet_ms;  // linearisation, features and one network forward pass
};

struct TimingConfig {
  std::vector<std::array<int, 2>> resolutions = {{16, 12}, {32, 24}, {64, 48}, {128, 96}};
  std::uint64_t seed = 0;
  /// Repeat each measurement until this much time has accumulated (at least once).
  double min_total_ms = 200.0;
  ConvLstmConfig conv;
};

std::vector<TimingPoint> timing_sweep(const TimingConfig& config);

/// Least-squares slope of log(y) against log(x).
double power_law_exponent(const std::vector<double>& x, const std::vector<double>& y);

void write_timing_csv(std::ostream& os, const std::vector<TimingPoint>& points);

}  // namespace lsnet
