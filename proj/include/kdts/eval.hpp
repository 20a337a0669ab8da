#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kdts/dataio.hpp"
#include "kdts/nn.hpp"

namespace kdts::eval {

// Percentage of correct predictions.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Argmax per row; ties break to the lowest class index.
std::vector<int> argmax_rows(const std::vector<std::vector<double>>& rows);
int argmax(std::span<const double> row);

// Expected calibration error in percent. Equal-width bins over the
// max-probability confidence; empty bins contribute zero. Rows must sum to 1
// within 1e-6.
double ece(const std::vector<std::vector<double>>& probabilities, std::span<const int> labels,
           int n_bins = 15);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom. Both
// samples need >= 2 values. Zero variance in both samples: equal means give
// p = 1 by convention, unequal means are degenerate and error.
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b);

struct Aggregate {
  double mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation (n - 1); 0 for n = 1
  int n = 0;
  std::vector<double> raw;
};

Aggregate aggregate(std::vector<double> values);

struct EvalReport {
  double accuracy_pct = 0.0;
  double ece_pct = 0.0;
  std::vector<double> per_class_accuracy;     // indexed by class position
  std::vector<std::vector<long>> confusion;   // [true][predicted]
  long n_samples = 0;
  std::string run_id;
  int checkpoint_epoch = 0;

  nlohmann::json to_json() const;
};

// Runs the network in inference mode over labeled windows (activity ids are
// mapped through class_set) and fills the full report.
EvalReport evaluate_windows(nn::Network& net, const std::vector<dataio::Window>& windows,
                            const dataio::ChannelStats& stats,
                            const std::vector<int>& class_set, int batch = 256);

struct TimingResult {
  double total_seconds = 0.0;
  double avg_ms_per_sample = 0.0;
  int n_samples = 0;
  int warmup = 0;
  std::string device = "cpu";
  std::string note;

  nlohmann::json to_json() const;
};

// Wall-clock inference at batch size 1; warm-up iterations are excluded from
// the measurement. Needs at least 100 samples. Must run without concurrent
// load; the note says so.
TimingResult timing_benchmark(nn::Network& net, const std::vector<dataio::Window>& windows,
                              const dataio::ChannelStats& stats, int warmup = 50);

}  // namespace kdts::eval
