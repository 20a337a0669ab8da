#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kdts/augment.hpp"
#include "kdts/dataio.hpp"
#include "kdts/distill.hpp"
#include "kdts/models.hpp"

namespace kdts::config {

struct DatasetProfile {
  std::string source = "synthetic";  // pamap2 | csv | synthetic
  std::string root;                  // raw data location (pamap2 root or csv file)
  dataio::CsvSchema csv;
  dataio::SyntheticConfig synthetic;
  int window_len = 500;
  int step = 500;
  int downsample = 1;
  bool pure_windows_only = true;
  std::string split = "holdout";            // holdout | loso
  std::vector<std::string> test_subjects;   // holdout mode; empty = last subject
  int fold = 0;                             // loso mode: which fold to train on

  nlohmann::json to_json() const;
  static DatasetProfile from_json(const nlohmann::json& j);
};

// Everything a run needs. All scientific parameters live in the file;
// environment variables are expanded in path fields only.
struct ExperimentConfig {
  DatasetProfile dataset;
  models::ModelSpec teacher;
  models::ModelSpec student;
  distill::TrainingSchedule schedule;
  distill::KDConfig kd;
  augment::Policy teacher_aug;
  augment::Policy student_aug;
  augment::Policy test_aug;
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "out";
  std::string cache_root;    // dataset cache location; defaults to <out_dir>/cache
  std::string teacher_ckpt;  // run dir or checkpoint file; used by the student role
  bool teacher_sees_clean = false;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& file);

  // Canonical serialization: fixed schema, sorted keys, no whitespace.
  std::string canonical() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;  // 16 hex digits
};

// ${VAR} expansion used for path fields.
std::string expand_env(const std::string& value);

std::string hash_hex(std::uint64_t h);

}  // namespace kdts::config
