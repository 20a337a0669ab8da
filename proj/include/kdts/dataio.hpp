#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace kdts::dataio {

// One subject's multichannel time-series. Values are stored channel-major:
// values[c * timesteps + t]. Labels are per-timestep activity ids; a
// per-recording label is represented as a constant label vector.
struct Recording {
  std::string subject_id;
  int channels = 0;
  long timesteps = 0;
  std::vector<double> values;
  std::vector<int> labels;
  double sample_rate_hz = 0.0;

  double at(int c, long t) const { return values[static_cast<std::size_t>(c) * timesteps + t]; }
  double& at(int c, long t) { return values[static_cast<std::size_t>(c) * timesteps + t]; }
};

// Fixed-length channels x time slice; the unit of training.
struct Window {
  std::vector<double> data;  // channel-major, data[c * length + t]
  int channels = 0;
  int length = 0;
  int label = 0;
  std::string subject_id;

  double at(int c, int t) const { return data[static_cast<std::size_t>(c) * length + t]; }
  double& at(int c, int t) { return data[static_cast<std::size_t>(c) * length + t]; }
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std_dev;  // floored at 1e-8 when computed
};

struct DatasetSplit {
  std::string name;
  std::vector<Window> train;
  std::vector<Window> test;
  std::vector<int> class_set;  // ordered activity ids
  ChannelStats stats;          // computed on train windows only
};

struct WindowConfig {
  int window_len = 500;
  int step = 500;
  // Windows spanning an activity-id change are discarded when true (default);
  // otherwise labeled by majority vote (ties to the lowest id).
  bool pure_only = true;
};

// ---------------------------------------------------------------------------
// PAMAP2 ingestion. Raw files are whitespace-separated text with 54 columns:
// timestamp, activity id, heart rate, then three IMU blocks (hand, chest,
// ankle) of 17 columns each. Within an IMU block the four orientation columns
// are invalid and dropped; the remaining 13 (temperature, two accelerometer
// triples, gyroscope, magnetometer) are kept. Channel order in the output is
// heart rate first, then the three IMU blocks: 1 + 3*13 = 40 channels.
// ---------------------------------------------------------------------------
struct Pamap2Config {
  std::vector<int> subjects = {101, 102, 103, 104, 105, 106, 107, 108, 109};
  // The 12 daily activities used for classification, in class order.
  std::vector<int> activities = {1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24};
};

inline constexpr int kPamap2RawColumns = 54;
inline constexpr int kPamap2Channels = 40;
inline constexpr double kPamap2SampleRateHz = 100.0;

// Channel index ranges [first, last] for heart rate and each IMU block, in
// the 40-channel output layout. Used by the per-sensor augmentation mode.
std::vector<std::pair<int, int>> pamap2_channel_groups();

std::vector<Recording> load_pamap2(const std::filesystem::path& root,
                                   const Pamap2Config& cfg = {});

// ---------------------------------------------------------------------------
// Generic CSV ingestion for tri-axial (or any fixed-schema) sensor data.
// ---------------------------------------------------------------------------
struct CsvSchema {
  std::string subject_column = "subject";
  std::string label_column = "label";
  std::vector<std::string> channel_columns;
  char delimiter = ',';
  double sample_rate_hz = 100.0;
};

std::vector<Recording> load_generic_csv(const std::filesystem::path& path,
                                        const CsvSchema& schema);

// Decimation without filtering: keeps every factor-th sample.
Recording downsample(const Recording& rec, int factor);

std::vector<Window> segment_windows(const Recording& rec, const WindowConfig& cfg);

// Expected number of sliding windows for a length-T series.
inline long window_count(long timesteps, int window_len, int step) {
  if (window_len > timesteps) return 0;
  return (timesteps - window_len) / step + 1;
}

std::vector<DatasetSplit> loso_splits(const std::vector<Recording>& recs,
                                      const WindowConfig& cfg);

// Single split with an explicit held-out subject set.
DatasetSplit holdout_split(const std::vector<Recording>& recs, const WindowConfig& cfg,
                           const std::vector<std::string>& test_subjects);

ChannelStats compute_stats(const std::vector<Window>& train);

// Per-channel z-score with train statistics; the identical transform is
// applied to test. Std is floored at 1e-8, so constant channels map to zero.
DatasetSplit normalize(DatasetSplit split);

void apply_stats(Window& w, const ChannelStats& stats);

// ---------------------------------------------------------------------------
// Synthetic corpus for tests and desk-scale experiments. Class c's signal is
// a sinusoid at a class-specific frequency plus a class-specific bump, scaled
// by a subject-specific gain, with additive Gaussian noise. Fully determined
// by the seed.
// ---------------------------------------------------------------------------
struct SyntheticConfig {
  int n_classes = 4;
  int n_subjects = 4;
  int channels = 3;
  int window_len = 128;  // one generated segment per window
  int windows_per_class = 25;
  std::uint64_t seed = 1;
  double noise_std = 0.15;
};

std::vector<Recording> make_synthetic(const SyntheticConfig& cfg);

// ---------------------------------------------------------------------------
// Window cache: binary container + JSON sidecar (schema version, class map,
// normalization stats). One directory per split with meta.json, train.kdw,
// test.kdw.
// ---------------------------------------------------------------------------
void save_split(const DatasetSplit& split, const std::filesystem::path& dir,
                const std::string& config_hash);
DatasetSplit load_split(const std::filesystem::path& dir);
std::string split_config_hash(const std::filesystem::path& dir);

}  // namespace kdts::dataio
