#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kdts/config.hpp"

namespace kdts::cli {

// Exit codes: 0 success, 1 user error, 2 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

struct CommonOpts {
  std::filesystem::path config_file;
  std::string out_override;                 // overrides config out_dir
  std::optional<std::uint64_t> seed_override;
  int workers = 0;                          // 0: one per hardware thread
  bool resume = false;
};

// Path of the cache directory for a dataset profile.
std::filesystem::path cache_dir(const config::ExperimentConfig& cfg);

// Windowed + split + stats cache with a manifest of per-class/subject counts.
int cmd_prepare_data(const CommonOpts& opts);

// role: teacher | scratch | student.
int cmd_train(const CommonOpts& opts, const std::string& role);

// Grid config: {"base": <experiment config>, "role": "...", "axes": {dot.path: [values]}}.
int cmd_sweep(const CommonOpts& opts, const std::filesystem::path& grid_file);

int cmd_evaluate(const CommonOpts& opts, const std::vector<std::string>& run_dirs,
                 const std::string& test_aug_kind);

int cmd_report(const CommonOpts& opts, const std::filesystem::path& manifest,
               const std::string& rows_axis, const std::string& cols_axis);

int cmd_benchmark(const CommonOpts& opts, const std::vector<std::string>& checkpoints,
                  int warmup, const std::string& device_label);

// Records the executable path for sweep worker spawning; called from main.
void set_self_exe(const char* argv0);

}  // namespace kdts::cli
