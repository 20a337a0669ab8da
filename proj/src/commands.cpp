#include "kdts/cli.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "kdts/error.hpp"
#include "kdts/eval.hpp"
#include "kdts/report.hpp"
#include "kdts/version.hpp"

namespace kdts::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string g_self_exe;

config::ExperimentConfig load_config(const CommonOpts& opts) {
  if (opts.config_file.empty()) throw UserError("missing --config");
  auto cfg = config::ExperimentConfig::load(opts.config_file);
  if (!opts.out_override.empty()) cfg.out_dir = opts.out_override;
  if (opts.seed_override) cfg.seeds = {*opts.seed_override};
  return cfg;
}

std::uint64_t dataset_hash(const config::DatasetProfile& p) {
  return fnv1a64(p.to_json().dump());
}

std::string short_hash(std::uint64_t h) { return config::hash_hex(h).substr(0, 8); }

void write_json_file(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw UserError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UserError("cannot open " + file.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UserError(file.string() + " is not valid JSON");
  return j;
}

std::vector<dataio::Recording> load_recordings(const config::DatasetProfile& p) {
  std::vector<dataio::Recording> recs;
  if (p.source == "pamap2") {
    if (p.root.empty()) {
      throw UserError("dataset.root must point at the PAMAP2 directory "
                      "(the one holding Protocol/subject101.dat ... subject109.dat)");
    }
    recs = dataio::load_pamap2(p.root);
  } else if (p.source == "csv") {
    if (p.root.empty()) throw UserError("dataset.root must point at the CSV file");
    recs = dataio::load_generic_csv(p.root, p.csv);
  } else {
    recs = dataio::make_synthetic(p.synthetic);
  }
  if (p.downsample > 1) {
    for (auto& r : recs) r = dataio::downsample(r, p.downsample);
  }
  return recs;
}

std::vector<dataio::DatasetSplit> build_splits(const config::DatasetProfile& p) {
  const auto recs = load_recordings(p);
  dataio::WindowConfig wc;
  wc.window_len = p.window_len;
  wc.step = p.step;
  wc.pure_only = p.pure_windows_only;

  if (p.split == "loso") return dataio::loso_splits(recs, wc);

  std::vector<std::string> held = p.test_subjects;
  if (held.empty()) {
    if (recs.size() < 2) throw UserError("holdout split needs at least 2 subjects");
    held = {recs.back().subject_id};  // default: last subject by input order
  }
  return {dataio::holdout_split(recs, wc, held)};
}

struct CacheInfo {
  fs::path dir;
  json manifest;
};

CacheInfo open_cache(const config::ExperimentConfig& cfg) {
  CacheInfo info;
  info.dir = cache_dir(cfg);
  const fs::path manifest_file = info.dir / "manifest.json";
  if (!fs::exists(manifest_file)) {
    throw UserError("no prepared dataset cache at " + info.dir.string() +
                    "; run: kdts prepare-data --config <config>");
  }
  info.manifest = read_json_file(manifest_file);
  if (info.manifest.at("schema_version").get<int>() != kSchemaVersion) {
    throw UserError("cache manifest schema version mismatch at " + info.dir.string());
  }
  return info;
}

dataio::DatasetSplit load_selected_split(const config::ExperimentConfig& cfg,
                                         const CacheInfo& cache) {
  const auto& splits = cache.manifest.at("splits");
  if (cfg.dataset.split == "loso") {
    const int fold = cfg.dataset.fold;
    if (fold < 0 || fold >= static_cast<int>(splits.size())) {
      throw UserError("dataset.fold " + std::to_string(fold) + " out of range; cache has " +
                      std::to_string(splits.size()) + " folds");
    }
    return dataio::load_split(cache.dir / splits.at(fold).at("dir").get<std::string>());
  }
  return dataio::load_split(cache.dir / splits.at(0).at("dir").get<std::string>());
}

// Effective config for one seed; its hash is what run artifacts embed.
config::ExperimentConfig seed_config(config::ExperimentConfig cfg, std::uint64_t seed) {
  cfg.seeds = {seed};
  return cfg;
}

fs::path run_dir_for(const config::ExperimentConfig& cfg, const std::string& role,
                     std::uint64_t seed) {
  // Stable, predictable names; the config hash stored inside each run guards
  // against collisions between different configurations.
  std::string name = role + "_s" + std::to_string(seed);
  if (cfg.dataset.split == "loso") name += "_f" + std::to_string(cfg.dataset.fold);
  return fs::path(cfg.out_dir) / "runs" / name;
}

// Resolves a teacher reference: either a checkpoint file or a run directory,
// in which case the distillation mode picks best (eskd) or final (full).
fs::path resolve_teacher_ckpt(const std::string& ref, distill::Mode mode) {
  if (ref.empty()) {
    throw UserError("student role needs teacher_ckpt in the config "
                    "(a checkpoint file or a teacher run directory)");
  }
  fs::path p(ref);
  if (fs::is_directory(p)) {
    const char* name = (mode == distill::Mode::eskd) ? "best.ckpt" : "final.ckpt";
    fs::path c = p / "checkpoints" / name;
    if (!fs::exists(c)) {
      throw UserError("teacher run directory " + p.string() + " has no " + std::string(name));
    }
    return c;
  }
  if (!fs::exists(p)) throw UserError("teacher checkpoint not found: " + p.string());
  return p;
}

bool run_is_complete(const fs::path& dir, const std::string& expected_hash) {
  const fs::path summary = dir / "summary.json";
  if (!fs::exists(summary)) return false;
  const json j = read_json_file(summary);
  const std::string have = j.value("config_hash", "");
  if (have != expected_hash) {
    throw UserError("run directory " + dir.string() + " holds a different config (hash " + have +
                    " vs " + expected_hash + "); refusing to overwrite");
  }
  return true;
}

}  // namespace

void set_self_exe(const char* argv0) {
  // An explicit path wins; it lets embedders point workers at the real CLI
  // binary. Bare names (PATH lookup) fall back to /proc/self/exe.
  if (argv0 != nullptr && std::strchr(argv0, '/') != nullptr && fs::exists(argv0)) {
    g_self_exe = fs::absolute(argv0).string();
    return;
  }
  char buf[4096];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n > 0) {
    buf[n] = '\0';
    g_self_exe = buf;
  } else if (argv0 != nullptr) {
    g_self_exe = argv0;
  }
}

fs::path cache_dir(const config::ExperimentConfig& cfg) {
  const fs::path root =
      cfg.cache_root.empty() ? fs::path(cfg.out_dir) / "cache" : fs::path(cfg.cache_root);
  return root / short_hash(dataset_hash(cfg.dataset));
}

// ---------------------------------------------------------------------------
// prepare-data
// ---------------------------------------------------------------------------

int cmd_prepare_data(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const fs::path dir = cache_dir(cfg);
  const std::string dhash = config::hash_hex(dataset_hash(cfg.dataset));

  if (fs::exists(dir / "manifest.json")) {
    const json m = read_json_file(dir / "manifest.json");
    if (m.value("dataset_hash", "") == dhash) {
      std::cout << "cache up to date: " << dir.string() << "\n";
      return kExitOk;
    }
    throw UserError("cache directory " + dir.string() + " holds a different dataset profile");
  }

  const auto splits = build_splits(cfg.dataset);

  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["dataset_hash"] = dhash;
  manifest["source"] = cfg.dataset.source;
  manifest["window_len"] = cfg.dataset.window_len;
  manifest["step"] = cfg.dataset.step;
  manifest["split_mode"] = cfg.dataset.split;
  manifest["splits"] = json::array();

  for (std::size_t i = 0; i < splits.size(); ++i) {
    char sub[32];
    std::snprintf(sub, sizeof(sub), "split_%03zu", i);
    dataio::save_split(splits[i], dir / sub, dhash);

    std::map<std::string, long> per_class_train, per_class_test;
    std::map<std::string, long> per_subject;
    for (const auto& w : splits[i].train) {
      ++per_class_train[std::to_string(w.label)];
      ++per_subject[w.subject_id];
    }
    for (const auto& w : splits[i].test) {
      ++per_class_test[std::to_string(w.label)];
      ++per_subject[w.subject_id];
    }

    json s;
    s["name"] = splits[i].name;
    s["dir"] = sub;
    s["n_train"] = splits[i].train.size();
    s["n_test"] = splits[i].test.size();
    s["class_set"] = splits[i].class_set;
    s["per_class_train"] = per_class_train;
    s["per_class_test"] = per_class_test;
    s["windows_per_subject"] = per_subject;
    manifest["splits"].push_back(s);
  }
  write_json_file(dir / "manifest.json", manifest);
  std::cout << "prepared " << splits.size() << " split(s) under " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

int train_one_seed(const config::ExperimentConfig& cfg, const std::string& role,
                   std::uint64_t seed, const dataio::DatasetSplit& split) {
  const auto eff = seed_config(cfg, seed);
  const fs::path dir = run_dir_for(cfg, role, seed);
  const std::string hash = eff.hash_hex();

  if (run_is_complete(dir, hash)) {
    std::cout << "run up to date: " << dir.string() << "\n";
    return kExitOk;
  }
  fs::create_directories(dir);
  write_json_file(dir / "config.json", eff.to_json());

  distill::TrainOptions topts;
  topts.run_dir = dir;
  topts.config_hash = hash;
  topts.teacher_sees_clean = cfg.teacher_sees_clean;

  if (role == "teacher") {
    distill::train_scratch(cfg.teacher, split, cfg.schedule, cfg.teacher_aug, seed, topts);
  } else if (role == "scratch") {
    distill::train_scratch(cfg.student, split, cfg.schedule, cfg.student_aug, seed, topts);
  } else if (role == "student") {
    const fs::path teacher = resolve_teacher_ckpt(cfg.teacher_ckpt, cfg.kd.mode);
    const auto loaded = models::load_checkpoint(teacher);
    // Teacher provenance lands in the summary after training.
    auto run = distill::train_kd(cfg.student, teacher, split, cfg.schedule, cfg.kd,
                                 cfg.student_aug, seed, topts);
    json summary = read_json_file(dir / "summary.json");
    summary["teacher_checkpoint"] = teacher.string();
    summary["teacher_label"] = loaded.meta.spec.label();
    summary["teacher_accuracy"] = loaded.meta.test_accuracy;
    summary["teacher_epoch"] = loaded.meta.epoch;
    write_json_file(dir / "summary.json", summary);
  } else {
    throw UserError("unknown role '" + role + "' (expected teacher|scratch|student)");
  }
  std::cout << "run complete: " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int cmd_train(const CommonOpts& opts, const std::string& role) {
  const auto cfg = load_config(opts);
  const auto cache = open_cache(cfg);
  const auto split = load_selected_split(cfg, cache);
  for (const std::uint64_t seed : cfg.seeds) {
    train_one_seed(cfg, role, seed, split);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

namespace {

// Assigns a value at a dot path ("kd.tau") inside a JSON object.
void set_path(json& j, const std::string& path, const json& value) {
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

struct Cell {
  std::string id;
  json axis_values;  // axis -> value
  json config_json;
  fs::path dir;
  std::string config_hash;
};

int spawn_train(const fs::path& config_file, const std::string& role, const fs::path& log_file) {
  const pid_t pid = ::fork();
  if (pid < 0) throw InternalError("sweep: fork failed");
  if (pid == 0) {
    const int fd = ::open(log_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      ::dup2(fd, 1);
      ::dup2(fd, 2);
      ::close(fd);
    }
    std::vector<std::string> args = {g_self_exe, "train", "--config", config_file.string(),
                                     "--role", role};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execv(g_self_exe.c_str(), argv.data());
    std::perror("execv");
    ::_exit(kExitInternal);
  }
  return pid;
}

}  // namespace

int cmd_sweep(const CommonOpts& opts, const fs::path& grid_file) {
  const json grid = read_json_file(grid_file);
  if (!grid.contains("base")) throw UserError("sweep: grid config needs a 'base' experiment");
  const std::string role = grid.value("role", "student");
  // Normalized full form so dot-path axes land on objects, not shorthands.
  json base = config::ExperimentConfig::from_json(grid.at("base")).to_json();
  if (!opts.out_override.empty()) base["out_dir"] = opts.out_override;

  static const std::set<std::string> kAllowedAxes = {
      "seed",
      "dataset.fold",
      "teacher.width",
      "student.width",
      "kd.tau",
      "kd.lambda",
      "augment.teacher.kind",
      "augment.student.kind",
      "augment.test.kind",
      "teacher_ckpt",
  };

  std::vector<std::pair<std::string, json>> axes;  // sorted by key
  if (grid.contains("axes")) {
    for (auto it = grid.at("axes").begin(); it != grid.at("axes").end(); ++it) {
      if (!kAllowedAxes.count(it.key())) {
        throw UserError("sweep: unsupported axis '" + it.key() + "'");
      }
      if (!it.value().is_array() || it.value().empty()) {
        throw UserError("sweep: axis '" + it.key() + "' must be a non-empty array");
      }
      axes.emplace_back(it.key(), it.value());
    }
  }

  // Cartesian expansion, odometer over the sorted axis list.
  std::vector<Cell> cells;
  std::vector<std::size_t> idx(axes.size(), 0);
  bool done = false;
  while (!done) {
    json cfg_json = base;
    json values = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const json& v = axes[a].second.at(idx[a]);
      values[axes[a].first] = v;
      if (axes[a].first == "seed") {
        cfg_json["seeds"] = json::array({v});
      } else {
        set_path(cfg_json, axes[a].first, v);
      }
    }
    Cell cell;
    cell.axis_values = values;
    cell.config_json = cfg_json;
    cells.push_back(std::move(cell));

    done = true;
    for (std::size_t a = axes.size(); a-- > 0;) {
      if (++idx[a] < axes[a].second.size()) {
        done = false;
        break;
      }
      idx[a] = 0;
    }
  }

  const std::string grid_hash = config::hash_hex(fnv1a64(base.dump() + role));
  const fs::path grid_dir = fs::path(base.value("out_dir", "out")) / "grid";
  const fs::path manifest_file = grid_dir / "grid.json";

  std::set<std::string> seen_dirs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& cell = cells[i];
    char id[48];
    std::snprintf(id, sizeof(id), "cell_%04zu", i);
    cell.id = id;
    cell.dir = grid_dir / cell.id;
    cell.config_json["out_dir"] = cell.dir.string();
    if (base.value("cache_root", std::string()).empty()) {
      cell.config_json["cache_root"] =
          (fs::path(base.value("out_dir", "out")) / "cache").string();
    }
    const auto cfg = config::ExperimentConfig::from_json(cell.config_json);
    cell.config_hash = cfg.hash_hex();
    if (!seen_dirs.insert(cell.dir.string()).second) {
      throw UserError("sweep: output directory collision at " + cell.dir.string());
    }
  }

  if (fs::exists(manifest_file)) {
    const json old = read_json_file(manifest_file);
    if (old.value("grid_hash", "") != grid_hash) {
      throw UserError("sweep: " + grid_dir.string() + " holds a different grid");
    }
    if (!opts.resume) {
      throw UserError("sweep: grid already exists at " + grid_dir.string() +
                      "; pass --resume to continue it");
    }
  }
  fs::create_directories(grid_dir);

  // Cells run as separate processes. A failed cell is recorded and never
  // corrupts the manifest.
  const int max_workers =
      opts.workers > 0 ? opts.workers
                       : std::max(1u, std::thread::hardware_concurrency());

  struct Running {
    int pid;
    std::size_t cell;
  };
  std::vector<Running> running;
  std::vector<std::string> status(cells.size(), "pending");

  auto reap_one = [&]() {
    int wstatus = 0;
    const pid_t pid = ::waitpid(-1, &wstatus, 0);
    if (pid < 0) throw InternalError("sweep: waitpid failed");
    for (std::size_t r = 0; r < running.size(); ++r) {
      if (running[r].pid == pid) {
        const bool ok = WIFEXITED(wstatus) && WEXITSTATUS(wstatus) == 0;
        status[running[r].cell] = ok ? "ok" : "failed";
        running.erase(running.begin() + r);
        return;
      }
    }
  };

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    // Completed cells (matching hash) are skipped.
    bool done = false;
    if (fs::exists(cell.dir / "config.json") && fs::exists(cell.dir / "runs")) {
      for (const auto& entry : fs::directory_iterator(cell.dir / "runs")) {
        if (fs::exists(entry.path() / "summary.json")) {
          done = true;
          break;
        }
      }
    }
    if (done) {
      status[i] = "ok";
      std::cout << cell.id << ": already complete\n";
      continue;
    }

    fs::create_directories(cell.dir);
    write_json_file(cell.dir / "config.json", cell.config_json);
    while (static_cast<int>(running.size()) >= max_workers) reap_one();
    const int pid = spawn_train(cell.dir / "config.json", role, cell.dir / "log.txt");
    running.push_back({pid, i});
    std::cout << cell.id << ": started (pid " << pid << ")\n";
  }
  while (!running.empty()) reap_one();

  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["grid_hash"] = grid_hash;
  manifest["role"] = role;
  manifest["cells"] = json::array();
  bool any_failed = false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    json c;
    c["id"] = cells[i].id;
    c["dir"] = cells[i].dir.string();
    c["axis_values"] = cells[i].axis_values;
    c["config_hash"] = cells[i].config_hash;
    c["status"] = status[i];
    manifest["cells"].push_back(c);
    if (status[i] == "failed") any_failed = true;
  }
  // Written atomically so an interrupted sweep never leaves a torn manifest.
  const fs::path tmp = manifest_file.string() + ".tmp";
  write_json_file(tmp, manifest);
  fs::rename(tmp, manifest_file);

  std::cout << "grid manifest: " << manifest_file.string() << "\n";
  if (any_failed) {
    std::cerr << "sweep: some cells failed; see per-cell log.txt\n";
    return kExitInternal;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const CommonOpts& opts, const std::vector<std::string>& run_dirs,
                 const std::string& test_aug_kind) {
  if (run_dirs.empty()) throw UserError("evaluate: no run directories given");
  for (const auto& rd : run_dirs) {
    const fs::path dir(rd);
    const json summary = read_json_file(dir / "summary.json");
    auto cfg = config::ExperimentConfig::from_json(read_json_file(dir / "config.json"));
    if (!opts.out_override.empty()) cfg.out_dir = opts.out_override;

    const auto cache = open_cache(cfg);
    const auto split = load_selected_split(cfg, cache);

    augment::Policy test_policy = cfg.test_aug;
    if (!test_aug_kind.empty()) test_policy.kind = augment::kind_from_string(test_aug_kind);

    // eskd students evaluate their best snapshot; everything else the final.
    const bool eskd = summary.value("kind", "") == "kd" && cfg.kd.mode == distill::Mode::eskd;
    const fs::path ckpt = dir / "checkpoints" / (eskd ? "best.ckpt" : "final.ckpt");
    auto loaded = models::load_checkpoint(ckpt);

    // The test view is transformed before normalization, deterministically.
    std::vector<dataio::Window> view = split.test;
    if (test_policy.kind != augment::Kind::none) {
      const std::uint64_t seed = summary.value("seed", 0ULL);
      for (std::size_t i = 0; i < view.size(); ++i) {
        view[i] = augment::transform(view[i], test_policy, seed, /*epoch=*/0, i);
      }
    }

    auto rep = eval::evaluate_windows(loaded.net, view, split.stats, split.class_set);
    rep.run_id = dir.filename().string();
    rep.checkpoint_epoch = loaded.meta.epoch;

    json out = rep.to_json();
    out["schema_version"] = kSchemaVersion;
    out["config_hash"] = summary.value("config_hash", "");
    out["ece_bins"] = 15;  // equal-width bins on max-probability confidence
    out["test_aug"] = augment::to_string(test_policy.kind);
    out["checkpoint"] = ckpt.string();
    const std::string name = "eval_" + augment::to_string(test_policy.kind) + ".json";
    write_json_file(dir / name, out);
    std::cout << rep.run_id << " [" << augment::to_string(test_policy.kind)
              << "]: accuracy " << rep.accuracy_pct << "%, ece " << rep.ece_pct << "%\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct CellData {
  json axis_values;
  json summary;
  std::vector<double> curve;  // per-epoch test accuracy
};

std::string axis_value_str(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::vector<double> read_curve(const fs::path& metrics_file) {
  std::vector<double> curve;
  std::ifstream in(metrics_file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("test_accuracy")) {
      curve.push_back(j["test_accuracy"].get<double>());
    }
  }
  return curve;
}

}  // namespace

int cmd_report(const CommonOpts& opts, const fs::path& manifest_file,
               const std::string& rows_axis_arg, const std::string& cols_axis_arg) {
  const json manifest = read_json_file(manifest_file);
  if (manifest.at("schema_version").get<int>() != kSchemaVersion) {
    throw UserError("report: manifest schema version mismatch");
  }
  const fs::path out_dir = !opts.out_override.empty()
                               ? fs::path(opts.out_override)
                               : manifest_file.parent_path() / "report";

  std::vector<CellData> cells;
  int schema = -1;
  for (const auto& c : manifest.at("cells")) {
    if (c.value("status", "") != "ok") continue;
    const fs::path dir = c.at("dir").get<std::string>();
    // one run dir per cell (single seed cells)
    fs::path run_dir;
    if (fs::exists(dir / "runs")) {
      for (const auto& entry : fs::directory_iterator(dir / "runs")) {
        if (fs::exists(entry.path() / "summary.json")) run_dir = entry.path();
      }
    }
    if (run_dir.empty()) continue;
    CellData cd;
    cd.axis_values = c.at("axis_values");
    cd.summary = read_json_file(run_dir / "summary.json");
    const int s = cd.summary.value("schema_version", -1);
    if (schema == -1) schema = s;
    if (s != schema) {
      throw UserError("report: refusing to mix schema versions (" + std::to_string(schema) +
                      " vs " + std::to_string(s) + ")");
    }
    cd.curve = read_curve(run_dir / "metrics.jsonl");
    cells.push_back(std::move(cd));
  }

  // Choose row/column axes: prefer explicit flags, else axes with > 1 value.
  std::map<std::string, std::set<std::string>> axis_domain;
  for (const auto& cd : cells) {
    for (auto it = cd.axis_values.begin(); it != cd.axis_values.end(); ++it) {
      axis_domain[it.key()].insert(axis_value_str(it.value()));
    }
  }
  auto pick_axis = [&](const std::string& wanted, const std::string& avoid) -> std::string {
    if (!wanted.empty()) return wanted;
    static const char* kPreferred[] = {"augment.student.kind", "teacher.width",
                                       "augment.test.kind",    "kd.tau",
                                       "kd.lambda",            "dataset.fold"};
    for (const char* a : kPreferred) {
      if (a != avoid && axis_domain.count(a) && axis_domain[a].size() > 1) return a;
    }
    return "";
  };
  const std::string rows_axis = pick_axis(rows_axis_arg, "");
  const std::string cols_axis = pick_axis(cols_axis_arg, rows_axis);

  auto value_of = [](const CellData& cd, const std::string& axis) -> std::string {
    if (axis.empty()) return "all";
    if (!cd.axis_values.contains(axis)) return "-";
    return axis_value_str(cd.axis_values.at(axis));
  };

  // Aggregate cell accuracies over everything that is not a row/col axis
  // (typically seeds and folds).
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  std::map<std::string, std::vector<double>> teacher_acc_by_col;
  for (const auto& cd : cells) {
    const std::string metric_key =
        cd.summary.value("kind", "") == "kd" && cd.summary.contains("best_accuracy") &&
                cd.summary.value("kd", json::object()).value("mode", "") == "eskd"
            ? "best_accuracy"
            : "final_accuracy";
    const double acc = cd.summary.value(metric_key, 0.0);
    const auto key = std::make_pair(value_of(cd, rows_axis), value_of(cd, cols_axis));
    groups[key].push_back(acc);
    if (cd.summary.contains("teacher_accuracy")) {
      teacher_acc_by_col[key.second].push_back(cd.summary["teacher_accuracy"].get<double>());
    }
  }

  std::set<std::string> row_set, col_set;
  for (const auto& [key, vals] : groups) {
    row_set.insert(key.first);
    col_set.insert(key.second);
  }

  std::vector<std::string> col_labels;
  for (const auto& c : col_set) {
    std::string label = c;
    const auto it = teacher_acc_by_col.find(c);
    if (it != teacher_acc_by_col.end() && !it->second.empty()) {
      // teacher accuracy in brackets, as in the summary tables
      char buf[40];
      std::snprintf(buf, sizeof(buf), " (%.2f)", it->second.front());
      label += buf;
    }
    col_labels.push_back(label);
  }

  auto table = report::Table::empty(
      "Accuracy (%)", rows_axis.empty() ? "group" : rows_axis, col_labels,
      std::vector<std::string>(row_set.begin(), row_set.end()));

  std::size_t ri = 0;
  for (const auto& r : row_set) {
    std::size_t ci = 0;
    for (const auto& c : col_set) {
      const auto it = groups.find({r, c});
      if (it != groups.end()) {
        const auto agg = eval::aggregate(it->second);
        table.cells[ri][ci] = report::format_mean_std(agg.mean, agg.std_dev);
      }
      ++ci;
    }
    ++ri;
  }

  fs::create_directories(out_dir);
  report::write_text_file(out_dir / "accuracy_table.md", report::to_markdown(table));
  report::write_text_file(out_dir / "accuracy_table.csv", report::to_csv(table));

  // Welch t-test of every row group against the first one (the baseline row),
  // aggregating across columns. Needs at least two values per side.
  if (row_set.size() >= 2) {
    std::map<std::string, std::vector<double>> by_row;
    for (const auto& [key, vals] : groups) {
      auto& dst = by_row[key.first];
      dst.insert(dst.end(), vals.begin(), vals.end());
    }
    const std::string baseline = row_set.count("none") ? "none" : *row_set.begin();
    if (by_row[baseline].size() >= 2) {
      auto ptable = report::Table::empty(
          "Welch t-test vs " + baseline,
          rows_axis.empty() ? "group" : rows_axis,
          {"mean\u00B1std", "t", "p-value"}, {});
      for (const auto& r : row_set) {
        const auto agg = eval::aggregate(by_row[r]);
        std::vector<std::string> row_cells = {report::format_mean_std(agg.mean, agg.std_dev),
                                              "\u2014", "\u2014"};
        if (r != baseline && by_row[r].size() >= 2) {
          const auto tt = eval::welch_ttest(by_row[r], by_row[baseline]);
          char tb[32], pb[32];
          std::snprintf(tb, sizeof(tb), "%.4f", tt.t);
          std::snprintf(pb, sizeof(pb), "%.4f", tt.p);
          row_cells[1] = tb;
          row_cells[2] = pb;
        }
        ptable.row_labels.push_back(r);
        ptable.cells.push_back(row_cells);
      }
      report::write_text_file(out_dir / "significance.md", report::to_markdown(ptable));
      report::write_text_file(out_dir / "significance.csv", report::to_csv(ptable));
    }
  }

  std::map<std::string, std::vector<double>> curves;
  for (const auto& cd : cells) {
    if (curves.size() >= 8) break;
    std::string name;
    for (auto it = cd.axis_values.begin(); it != cd.axis_values.end(); ++it) {
      if (!name.empty()) name += " ";
      name += it.key().substr(it.key().rfind('.') + 1) + "=" + axis_value_str(it.value());
    }
    if (name.empty()) name = "run";
    if (!cd.curve.empty() && !curves.count(name)) curves[name] = cd.curve;
  }
  report::write_curves_svg(out_dir / "curves.svg", curves);

  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["rows_axis"] = rows_axis;
  summary["cols_axis"] = cols_axis;
  summary["n_cells"] = cells.size();
  json cells_json = json::array();
  for (const auto& [key, vals] : groups) {
    const auto agg = eval::aggregate(vals);
    json g;
    g["row"] = key.first;
    g["col"] = key.second;
    g["mean"] = agg.mean;
    g["std"] = agg.std_dev;
    g["n"] = agg.n;
    g["raw"] = agg.raw;
    cells_json.push_back(g);
  }
  summary["groups"] = cells_json;
  write_json_file(out_dir / "report.json", summary);

  std::cout << "report written to " << out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

int cmd_benchmark(const CommonOpts& opts, const std::vector<std::string>& checkpoints,
                  int warmup, const std::string& device_label) {
  if (checkpoints.empty()) throw UserError("benchmark: no checkpoints given");
  const auto cfg = load_config(opts);
  const auto cache = open_cache(cfg);
  const auto split = load_selected_split(cfg, cache);

  struct Row {
    std::string label;
    long params;
    eval::TimingResult timing;
  };
  std::vector<Row> rows;
  for (const auto& c : checkpoints) {
    auto loaded = models::load_checkpoint(c);
    Row row;
    row.label = loaded.meta.spec.label();
    row.params = models::count_parameters(loaded.net);
    row.timing = eval::timing_benchmark(loaded.net, split.test, split.stats, warmup);
    row.timing.device = device_label;
    std::cout << row.label << ": " << row.timing.avg_ms_per_sample << " ms/sample\n";
    rows.push_back(std::move(row));
  }

  auto table = report::Table::empty(
      "Processing time (batch size 1, " + device_label + ")", "Model",
      {"# Parameters", "Total (s)", "Avg (ms)"}, {});
  table.row_labels.reserve(rows.size());
  json out;
  out["schema_version"] = kSchemaVersion;
  out["device"] = device_label;
  out["results"] = json::array();
  for (const auto& row : rows) {
    table.row_labels.push_back(row.label);
    char p[32], t[32], a[32];
    std::snprintf(p, sizeof(p), "%ld", row.params);
    std::snprintf(t, sizeof(t), "%.3f", row.timing.total_seconds);
    std::snprintf(a, sizeof(a), "%.4f", row.timing.avg_ms_per_sample);
    table.cells.push_back({p, t, a});
    json r = row.timing.to_json();
    r["model"] = row.label;
    r["parameters"] = row.params;
    out["results"].push_back(r);
  }

  const fs::path out_dir =
      !opts.out_override.empty() ? fs::path(opts.out_override) : fs::path(cfg.out_dir) / "bench";
  report::write_text_file(out_dir / "benchmark.md", report::to_markdown(table));
  write_json_file(out_dir / "benchmark.json", out);
  std::cout << "benchmark written to " << out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace kdts::cli
