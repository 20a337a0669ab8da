#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kdts/augment.hpp"
#include "kdts/dataio.hpp"
#include "kdts/models.hpp"
#include "kdts/nn.hpp"

namespace kdts::distill {

enum class Mode { full, eskd };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& name);

struct KDConfig {
  double tau = 4.0;   // temperature, >= 1
  double lam = 0.7;   // mixing weight, in [0, 1]
  Mode mode = Mode::full;

  void validate() const;
  nlohmann::json to_json() const;
  static KDConfig from_json(const nlohmann::json& j);
};

struct LrDrop {
  int epoch = 10;
  double factor = 0.5;
};

struct TrainingSchedule {
  int total_epochs = 200;
  double initial_lr = 0.1;
  LrDrop first_drop{10, 0.5};
  double periodic_factor = 0.1;  // applied after every floor(total/3) epochs
  int batch_size = 64;
  double momentum = 0.9;
  int checkpoint_every = 1;

  void validate() const;
  // full: the whole budget; eskd: ceil(0.75 * total).
  int student_epochs(Mode mode) const;

  nlohmann::json to_json() const;
  static TrainingSchedule from_json(const nlohmann::json& j);
};

// Learning rate for a 1-based epoch. Cumulative multiplicative schedule:
// initial_lr, times first_drop.factor once after first_drop.epoch, times
// periodic_factor after every multiple of floor(total_epochs / 3).
double lr_at(int epoch, const TrainingSchedule& sched);

// Numerically stable temperature softmax; components sum to 1.
std::vector<double> softmax_with_temperature(std::span<const double> logits, double tau);

struct LossValue {
  double total = 0.0;  // (1 - lam) * ce + lam * kd
  double ce = 0.0;     // unweighted cross entropy
  double kd = 0.0;     // weighted distillation term lam * tau^2 * KL
  std::vector<double> grad;  // d total / d student_logits
};

// Plain cross entropy against a hard label.
LossValue cross_entropy(std::span<const double> logits, int label);

// L = (1 - lam) * H(softmax(a_s), y) + lam * tau^2 * KL(f_t || f_s) with
// f = softmax(logits / tau). Teacher logits are constants; the gradient is
// with respect to the student logits only.
LossValue kd_loss(std::span<const double> student_logits,
                  std::span<const double> teacher_logits, int label, const KDConfig& cfg);

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_ce = 0.0;
  double train_kd = 0.0;
  double test_accuracy = 0.0;
};

struct StoredCheckpoint {
  int epoch = 0;
  double test_accuracy = 0.0;
  std::vector<double> state;     // in-memory blob (may be empty when persisted)
  std::filesystem::path file;    // set when written to disk
};

struct TrainedRun {
  models::ModelSpec spec;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<EpochRecord> records;
  std::vector<StoredCheckpoint> checkpoints;  // periodic, ends with the final epoch
  StoredCheckpoint best;                      // max test accuracy, earliest epoch on ties
  std::filesystem::path dir;                  // empty for in-memory runs
};

struct TrainOptions {
  std::filesystem::path run_dir;  // when set, artifacts are written here
  std::string config_hash;
  bool teacher_sees_clean = false;  // ablation: teacher consumes unaugmented inputs
  int eval_batch = 256;
};

TrainedRun train_scratch(const models::ModelSpec& spec, const dataio::DatasetSplit& split,
                         const TrainingSchedule& sched, const augment::Policy& aug,
                         std::uint64_t seed, const TrainOptions& opts = {});

// Teacher passed in memory (forward passes reuse its layer caches, weights
// and running statistics stay untouched). Epoch budget follows cfg.mode.
TrainedRun train_kd(const models::ModelSpec& student_spec, nn::Network& teacher,
                    const dataio::DatasetSplit& split, const TrainingSchedule& sched,
                    const KDConfig& cfg, const augment::Policy& aug, std::uint64_t seed,
                    const TrainOptions& opts = {});

// Teacher loaded from a checkpoint file.
TrainedRun train_kd(const models::ModelSpec& student_spec,
                    const std::filesystem::path& teacher_ckpt,
                    const dataio::DatasetSplit& split, const TrainingSchedule& sched,
                    const KDConfig& cfg, const augment::Policy& aug, std::uint64_t seed,
                    const TrainOptions& opts = {});

// The checkpoint with maximum recorded test accuracy; ties resolve to the
// earliest epoch. Errors when the run holds no checkpoints.
const StoredCheckpoint& select_eskd_teacher(const TrainedRun& run);

// Restores a network from a stored checkpoint (in-memory blob or file).
nn::Network restore(const models::ModelSpec& spec, const StoredCheckpoint& ckpt);

}  // namespace kdts::distill
