#include "kdts/config.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kdts/error.hpp"
#include "kdts/rng.hpp"

namespace kdts::config {

using nlohmann::json;

std::string expand_env(const std::string& value) {
  std::string out;
  out.reserve(value.size());
  for (std::size_t i = 0; i < value.size();) {
    if (value[i] == '$' && i + 1 < value.size() && value[i + 1] == '{') {
      const auto end = value.find('}', i + 2);
      if (end == std::string::npos) throw UserError("config: unterminated ${ in '" + value + "'");
      const std::string name = value.substr(i + 2, end - i - 2);
      const char* env = std::getenv(name.c_str());
      if (env == nullptr) {
        throw UserError("config: environment variable " + name + " is not set");
      }
      out += env;
      i = end + 1;
    } else {
      out += value[i++];
    }
  }
  return out;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json DatasetProfile::to_json() const {
  json j;
  j["source"] = source;
  j["root"] = root;
  j["csv"] = {{"subject_column", csv.subject_column},
              {"label_column", csv.label_column},
              {"channel_columns", csv.channel_columns},
              {"delimiter", std::string(1, csv.delimiter)},
              {"sample_rate_hz", csv.sample_rate_hz}};
  j["synthetic"] = {{"n_classes", synthetic.n_classes},
                    {"n_subjects", synthetic.n_subjects},
                    {"channels", synthetic.channels},
                    {"window_len", synthetic.window_len},
                    {"windows_per_class", synthetic.windows_per_class},
                    {"seed", synthetic.seed},
                    {"noise_std", synthetic.noise_std}};
  j["window_len"] = window_len;
  j["step"] = step;
  j["downsample"] = downsample;
  j["pure_windows_only"] = pure_windows_only;
  j["split"] = split;
  j["test_subjects"] = test_subjects;
  j["fold"] = fold;
  return j;
}

DatasetProfile DatasetProfile::from_json(const json& j) {
  DatasetProfile p;
  p.source = j.value("source", p.source);
  if (p.source != "pamap2" && p.source != "csv" && p.source != "synthetic") {
    throw UserError("config: dataset.source must be pamap2|csv|synthetic");
  }
  p.root = expand_env(j.value("root", p.root));
  if (j.contains("csv")) {
    const auto& c = j.at("csv");
    p.csv.subject_column = c.value("subject_column", p.csv.subject_column);
    p.csv.label_column = c.value("label_column", p.csv.label_column);
    p.csv.channel_columns =
        c.value("channel_columns", p.csv.channel_columns);
    const std::string d = c.value("delimiter", std::string(1, p.csv.delimiter));
    if (d.size() != 1) throw UserError("config: csv.delimiter must be one character");
    p.csv.delimiter = d[0];
    p.csv.sample_rate_hz = c.value("sample_rate_hz", p.csv.sample_rate_hz);
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    p.synthetic.n_classes = s.value("n_classes", p.synthetic.n_classes);
    p.synthetic.n_subjects = s.value("n_subjects", p.synthetic.n_subjects);
    p.synthetic.channels = s.value("channels", p.synthetic.channels);
    p.synthetic.window_len = s.value("window_len", p.synthetic.window_len);
    p.synthetic.windows_per_class = s.value("windows_per_class", p.synthetic.windows_per_class);
    p.synthetic.seed = s.value("seed", p.synthetic.seed);
    p.synthetic.noise_std = s.value("noise_std", p.synthetic.noise_std);
  }
  p.window_len = j.value("window_len", p.window_len);
  p.step = j.value("step", p.step);
  p.downsample = j.value("downsample", p.downsample);
  p.pure_windows_only = j.value("pure_windows_only", p.pure_windows_only);
  p.split = j.value("split", p.split);
  if (p.split != "holdout" && p.split != "loso") {
    throw UserError("config: dataset.split must be holdout|loso");
  }
  p.test_subjects = j.value("test_subjects", p.test_subjects);
  p.fold = j.value("fold", p.fold);
  return p;
}

json ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = dataset.to_json();
  j["teacher"] = teacher.to_json();
  j["student"] = student.to_json();
  j["schedule"] = schedule.to_json();
  j["kd"] = kd.to_json();
  j["augment"] = {{"teacher", teacher_aug.to_json()},
                  {"student", student_aug.to_json()},
                  {"test", test_aug.to_json()}};
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["cache_root"] = cache_root;
  j["teacher_ckpt"] = teacher_ckpt;
  j["teacher_sees_clean"] = teacher_sees_clean;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = DatasetProfile::from_json(j.at("dataset"));
  if (j.contains("teacher")) c.teacher = models::ModelSpec::from_json(j.at("teacher"));
  if (j.contains("student")) c.student = models::ModelSpec::from_json(j.at("student"));
  if (j.contains("schedule")) c.schedule = distill::TrainingSchedule::from_json(j.at("schedule"));
  if (j.contains("kd")) c.kd = distill::KDConfig::from_json(j.at("kd"));
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    if (a.contains("teacher")) c.teacher_aug = augment::Policy::from_json(a.at("teacher"));
    if (a.contains("student")) c.student_aug = augment::Policy::from_json(a.at("student"));
    if (a.contains("test")) c.test_aug = augment::Policy::from_json(a.at("test"));
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (c.seeds.empty()) throw UserError("config: seeds must be non-empty");
  c.out_dir = expand_env(j.value("out_dir", c.out_dir));
  c.cache_root = expand_env(j.value("cache_root", c.cache_root));
  c.teacher_ckpt = expand_env(j.value("teacher_ckpt", c.teacher_ckpt));
  c.teacher_sees_clean = j.value("teacher_sees_clean", c.teacher_sees_clean);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UserError("config: cannot open " + file.string());
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw UserError("config: " + file.string() + " is not valid JSON");
  return from_json(j);
}

std::string ExperimentConfig::canonical() const {
  // nlohmann objects iterate in sorted key order, so dump() is canonical.
  return to_json().dump();
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical()); }

std::string ExperimentConfig::hash_hex() const { return config::hash_hex(hash()); }

}  // namespace kdts::config
