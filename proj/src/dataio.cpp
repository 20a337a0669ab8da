#include "kdts/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "kdts/error.hpp"
#include "kdts/rng.hpp"
#include "kdts/version.hpp"

namespace kdts::dataio {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool parse_double(std::string_view tok, double& out) {
  if (tok == "NaN" || tok == "nan" || tok == "NA") {
    out = kNaN;
    return true;
  }
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

// Linear interpolation inside gaps, forward/back fill at the edges. A channel
// with no finite sample at all becomes zeros.
void fill_missing(std::vector<double>& x) {
  const long n = static_cast<long>(x.size());
  long prev = -1;
  for (long i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) continue;
    if (prev < 0) {
      for (long j = 0; j < i; ++j) x[j] = x[i];  // leading edge
    } else if (prev + 1 < i) {
      const double step = (x[i] - x[prev]) / static_cast<double>(i - prev);
      for (long j = prev + 1; j < i; ++j) x[j] = x[prev] + step * static_cast<double>(j - prev);
    }
    prev = i;
  }
  if (prev < 0) {
    std::fill(x.begin(), x.end(), 0.0);
  } else {
    for (long j = prev + 1; j < n; ++j) x[j] = x[prev];
  }
}

std::vector<std::string_view> split_ws(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> pamap2_channel_groups() {
  // heart rate, then hand / chest / ankle IMU blocks of 13 channels each
  return {{0, 0}, {1, 13}, {14, 26}, {27, 39}};
}

std::vector<Recording> load_pamap2(const std::filesystem::path& root, const Pamap2Config& cfg) {
  namespace fs = std::filesystem;

  std::vector<Recording> out;
  out.reserve(cfg.subjects.size());

  const std::set<int> keep(cfg.activities.begin(), cfg.activities.end());

  for (int subject : cfg.subjects) {
    const std::string fname = "subject" + std::to_string(subject) + ".dat";
    fs::path file = root / fname;
    if (!fs::exists(file)) file = root / "Protocol" / fname;
    if (!fs::exists(file)) {
      throw UserError("pamap2: missing file for subject " + std::to_string(subject) +
                      " (looked for " + (root / fname).string() + " and " +
                      (root / "Protocol" / fname).string() + ")");
    }

    std::ifstream in(file);
    if (!in) throw UserError("pamap2: cannot open " + file.string());

    // Raw per-timestep storage before cleaning: activity id + 40 channels.
    std::vector<int> activity;
    std::vector<std::vector<double>> chan(kPamap2Channels);

    std::string line;
    std::vector<std::string_view> toks;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      split_ws(line, toks);
      if (toks.empty()) continue;
      if (static_cast<int>(toks.size()) != kPamap2RawColumns) {
        throw UserError("pamap2: " + fname + " line " + std::to_string(line_no) +
                        ": expected " + std::to_string(kPamap2RawColumns) +
                        " columns, got " + std::to_string(toks.size()));
      }
      double v = 0.0;
      if (!parse_double(toks[1], v) || !std::isfinite(v)) {
        throw UserError("pamap2: " + fname + " line " + std::to_string(line_no) +
                        ": bad activity id");
      }
      activity.push_back(static_cast<int>(v));

      auto grab = [&](int raw_col, int channel) {
        double value = 0.0;
        if (!parse_double(toks[raw_col], value)) {
          throw UserError("pamap2: " + fname + " line " + std::to_string(line_no) +
                          ": unparsable value in column " + std::to_string(raw_col + 1));
        }
        chan[channel].push_back(value);
      };

      grab(2, 0);  // heart rate
      int channel = 1;
      for (int imu = 0; imu < 3; ++imu) {
        const int base = 3 + imu * 17;
        for (int j = 0; j < 13; ++j) grab(base + j, channel++);  // orientation cols dropped
      }
    }

    for (auto& c : chan) fill_missing(c);

    // Restrict to the configured activities.
    Recording rec;
    rec.subject_id = std::to_string(subject);
    rec.channels = kPamap2Channels;
    rec.sample_rate_hz = kPamap2SampleRateHz;
    std::vector<long> kept;
    kept.reserve(activity.size());
    for (long t = 0; t < static_cast<long>(activity.size()); ++t) {
      if (keep.count(activity[t])) kept.push_back(t);
    }
    rec.timesteps = static_cast<long>(kept.size());
    rec.values.resize(static_cast<std::size_t>(rec.channels) * rec.timesteps);
    rec.labels.resize(rec.timesteps);
    for (long i = 0; i < rec.timesteps; ++i) rec.labels[i] = activity[kept[i]];
    for (int c = 0; c < rec.channels; ++c) {
      for (long i = 0; i < rec.timesteps; ++i) rec.at(c, i) = chan[c][kept[i]];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Recording> load_generic_csv(const std::filesystem::path& path,
                                        const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw UserError("csv: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) return {};  // empty file: empty sequence

  auto split = [&](const std::string& s) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : s) {
      if (c == schema.delimiter) {
        cells.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur.push_back(c);
      }
    }
    cells.push_back(cur);
    return cells;
  };

  const std::vector<std::string> header = split(line);
  auto col_index = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };

  std::vector<std::string> missing;
  const int subj_col = col_index(schema.subject_column);
  const int label_col = col_index(schema.label_column);
  if (subj_col < 0) missing.push_back(schema.subject_column);
  if (label_col < 0) missing.push_back(schema.label_column);
  std::vector<int> chan_cols;
  for (const auto& name : schema.channel_columns) {
    const int idx = col_index(name);
    if (idx < 0) missing.push_back(name);
    chan_cols.push_back(idx);
  }
  if (!missing.empty()) {
    std::string msg = "csv: " + path.string() + " is missing columns:";
    for (const auto& m : missing) msg += " " + m;
    throw UserError(msg);
  }

  // Rows grouped by subject, file order preserved inside each group.
  struct Rows {
    std::vector<int> labels;
    std::vector<std::vector<double>> chan;
  };
  std::map<std::string, Rows> by_subject;

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw UserError("csv: " + path.string() + " line " + std::to_string(line_no) +
                      ": expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    auto& rows = by_subject[cells[subj_col]];
    if (rows.chan.empty()) rows.chan.resize(chan_cols.size());
    double lab = 0.0;
    if (!parse_double(cells[label_col], lab) || !std::isfinite(lab)) {
      throw UserError("csv: " + path.string() + " line " + std::to_string(line_no) +
                      ": bad label");
    }
    rows.labels.push_back(static_cast<int>(lab));
    for (std::size_t k = 0; k < chan_cols.size(); ++k) {
      double v = 0.0;
      if (!parse_double(cells[chan_cols[k]], v)) {
        throw UserError("csv: " + path.string() + " line " + std::to_string(line_no) +
                        ": unparsable value in column " + schema.channel_columns[k]);
      }
      rows.chan[k].push_back(v);
    }
  }

  std::vector<Recording> out;
  for (auto& [subject, rows] : by_subject) {  // std::map: deterministic by subject id
    Recording rec;
    rec.subject_id = subject;
    rec.channels = static_cast<int>(chan_cols.size());
    rec.timesteps = static_cast<long>(rows.labels.size());
    rec.sample_rate_hz = schema.sample_rate_hz;
    rec.labels = std::move(rows.labels);
    rec.values.resize(static_cast<std::size_t>(rec.channels) * rec.timesteps);
    for (int c = 0; c < rec.channels; ++c) {
      fill_missing(rows.chan[c]);
      for (long t = 0; t < rec.timesteps; ++t) rec.at(c, t) = rows.chan[c][t];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Recording downsample(const Recording& rec, int factor) {
  if (factor < 1) throw UserError("downsample: factor must be >= 1");
  if (factor == 1) return rec;
  Recording out;
  out.subject_id = rec.subject_id;
  out.channels = rec.channels;
  out.timesteps = (rec.timesteps + factor - 1) / factor;  // indices 0, f, 2f, ...
  out.sample_rate_hz = rec.sample_rate_hz / factor;
  out.values.resize(static_cast<std::size_t>(out.channels) * out.timesteps);
  out.labels.resize(out.timesteps);
  for (long i = 0; i < out.timesteps; ++i) out.labels[i] = rec.labels[i * factor];
  for (int c = 0; c < out.channels; ++c) {
    for (long i = 0; i < out.timesteps; ++i) out.at(c, i) = rec.at(c, i * factor);
  }
  return out;
}

std::vector<Window> segment_windows(const Recording& rec, const WindowConfig& cfg) {
  if (cfg.window_len < 1 || cfg.step < 1) {
    throw UserError("segment_windows: window_len and step must be >= 1");
  }
  std::vector<Window> out;
  if (cfg.window_len > rec.timesteps) return out;

  const long count = window_count(rec.timesteps, cfg.window_len, cfg.step);
  out.reserve(count);
  for (long w = 0; w < count; ++w) {
    const long start = w * cfg.step;

    int label = rec.labels[start];
    bool pure = true;
    std::map<int, int> votes;
    for (int t = 0; t < cfg.window_len; ++t) {
      const int l = rec.labels[start + t];
      if (l != label) pure = false;
      ++votes[l];
    }
    if (!pure) {
      if (cfg.pure_only) continue;
      int best = 0;
      for (const auto& [l, n] : votes) {  // map order: ties go to the lowest id
        if (n > best) {
          best = n;
          label = l;
        }
      }
    }

    Window win;
    win.channels = rec.channels;
    win.length = cfg.window_len;
    win.label = label;
    win.subject_id = rec.subject_id;
    win.data.resize(static_cast<std::size_t>(win.channels) * win.length);
    for (int c = 0; c < win.channels; ++c) {
      const double* src = rec.values.data() + static_cast<std::size_t>(c) * rec.timesteps + start;
      std::memcpy(win.data.data() + static_cast<std::size_t>(c) * win.length, src,
                  sizeof(double) * cfg.window_len);
    }
    out.push_back(std::move(win));
  }
  return out;
}

namespace {

std::vector<int> collect_class_set(const std::vector<Window>& windows) {
  std::set<int> s;
  for (const auto& w : windows) s.insert(w.label);
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<DatasetSplit> loso_splits(const std::vector<Recording>& recs,
                                      const WindowConfig& cfg) {
  std::vector<std::string> subjects;
  for (const auto& r : recs) {
    if (std::find(subjects.begin(), subjects.end(), r.subject_id) == subjects.end()) {
      subjects.push_back(r.subject_id);
    }
  }
  if (subjects.size() < 2) {
    throw UserError("loso_splits: need at least 2 distinct subjects, got " +
                    std::to_string(subjects.size()));
  }

  std::vector<Window> all;
  for (const auto& r : recs) {
    auto w = segment_windows(r, cfg);
    all.insert(all.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  const std::vector<int> class_set = collect_class_set(all);

  std::vector<DatasetSplit> splits;
  splits.reserve(subjects.size());
  for (const auto& held_out : subjects) {
    DatasetSplit split;
    split.name = "fold_" + held_out;
    split.class_set = class_set;
    for (const auto& w : all) {
      (w.subject_id == held_out ? split.test : split.train).push_back(w);
    }
    split.stats = compute_stats(split.train);
    splits.push_back(std::move(split));
  }
  return splits;
}

DatasetSplit holdout_split(const std::vector<Recording>& recs, const WindowConfig& cfg,
                           const std::vector<std::string>& test_subjects) {
  DatasetSplit split;
  split.name = "holdout";
  const std::set<std::string> held(test_subjects.begin(), test_subjects.end());
  for (const auto& r : recs) {
    auto w = segment_windows(r, cfg);
    auto& dst = held.count(r.subject_id) ? split.test : split.train;
    dst.insert(dst.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  if (split.train.empty() || split.test.empty()) {
    throw UserError("holdout_split: train and test must both be non-empty");
  }
  std::vector<Window> all = split.train;
  all.insert(all.end(), split.test.begin(), split.test.end());
  split.class_set = collect_class_set(all);
  split.stats = compute_stats(split.train);
  return split;
}

ChannelStats compute_stats(const std::vector<Window>& train) {
  if (train.empty()) throw UserError("compute_stats: train set is empty");
  const int C = train[0].channels;
  ChannelStats stats;
  stats.mean.assign(C, 0.0);
  stats.std_dev.assign(C, 0.0);
  std::vector<long double> sum(C, 0.0L), sum_sq(C, 0.0L);
  long n = 0;
  for (const auto& w : train) {
    for (int c = 0; c < C; ++c) {
      for (int t = 0; t < w.length; ++t) {
        const double v = w.at(c, t);
        sum[c] += v;
        sum_sq[c] += static_cast<long double>(v) * v;
      }
    }
    n += w.length;
  }
  for (int c = 0; c < C; ++c) {
    const double mean = static_cast<double>(sum[c] / n);
    const double var = std::max(0.0, static_cast<double>(sum_sq[c] / n) - mean * mean);
    stats.mean[c] = mean;
    stats.std_dev[c] = std::max(std::sqrt(var), 1e-8);
  }
  return stats;
}

void apply_stats(Window& w, const ChannelStats& stats) {
  for (int c = 0; c < w.channels; ++c) {
    const double m = stats.mean[c];
    const double inv = 1.0 / stats.std_dev[c];
    for (int t = 0; t < w.length; ++t) w.at(c, t) = (w.at(c, t) - m) * inv;
  }
}

DatasetSplit normalize(DatasetSplit split) {
  if (split.train.empty()) throw UserError("normalize: train set is empty");
  split.stats = compute_stats(split.train);
  for (auto& w : split.train) apply_stats(w, split.stats);
  for (auto& w : split.test) apply_stats(w, split.stats);
  return split;
}

std::vector<Recording> make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_classes < 1 || cfg.n_subjects < 1 || cfg.channels < 1 || cfg.window_len < 1 ||
      cfg.windows_per_class < 1) {
    throw UserError("make_synthetic: all counts must be >= 1");
  }

  const int T = cfg.window_len;
  std::vector<Recording> out;
  out.reserve(cfg.n_subjects);

  for (int s = 0; s < cfg.n_subjects; ++s) {
    auto gain_rng = RngStream::derive(cfg.seed, "synth-gain", static_cast<std::uint64_t>(s));
    const double gain = 0.8 + 0.4 * gain_rng.next_unit();

    Recording rec;
    rec.subject_id = "s" + std::string(s < 10 ? "0" : "") + std::to_string(s);
    rec.channels = cfg.channels;
    rec.timesteps = static_cast<long>(cfg.n_classes) * cfg.windows_per_class * T;
    rec.sample_rate_hz = 100.0;
    rec.values.resize(static_cast<std::size_t>(rec.channels) * rec.timesteps);
    rec.labels.resize(rec.timesteps);

    long offset = 0;
    for (int c = 0; c < cfg.n_classes; ++c) {
      const double freq = 2.0 + 3.0 * c;                      // cycles per window
      const double bump_center = (c + 0.5) * T / cfg.n_classes;
      const double bump_width = T / 20.0;
      for (int w = 0; w < cfg.windows_per_class; ++w) {
        auto rng = RngStream::derive(cfg.seed, "synth-win",
                                     static_cast<std::uint64_t>(s) * 1000003ULL + c,
                                     static_cast<std::uint64_t>(w));
        std::vector<double> phase(cfg.channels);
        for (auto& p : phase) p = 2.0 * std::numbers::pi * rng.next_unit();
        for (int ch = 0; ch < cfg.channels; ++ch) {
          for (int t = 0; t < T; ++t) {
            const double dt = (t - bump_center) / bump_width;
            const double base = std::sin(2.0 * std::numbers::pi * freq * t / T + phase[ch]) +
                                1.5 * std::exp(-0.5 * dt * dt);
            rec.at(ch, offset + t) = gain * base + cfg.noise_std * rng.next_gaussian();
          }
        }
        for (int t = 0; t < T; ++t) rec.labels[offset + t] = c;
        offset += T;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache container. Little-endian; layout documented in the README.
// ---------------------------------------------------------------------------
namespace {

constexpr char kWindowMagic[8] = {'K', 'D', 'W', 'I', 'N', '0', '0', '1'};

void write_raw(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  write_raw(out, &v, sizeof(v));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw InternalError("window cache: truncated file");
  return v;
}

void write_windows(const std::filesystem::path& file, const std::vector<Window>& windows,
                   const std::vector<std::string>& subjects, int channels, int window_len) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("window cache: cannot write " + file.string());
  write_raw(out, kWindowMagic, sizeof(kWindowMagic));
  write_pod<std::uint64_t>(out, windows.size());
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(channels));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(window_len));
  for (const auto& w : windows) {
    const auto it = std::find(subjects.begin(), subjects.end(), w.subject_id);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(it - subjects.begin()));
    write_pod<std::int32_t>(out, w.label);
    write_raw(out, w.data.data(), sizeof(double) * w.data.size());
  }
}

std::vector<Window> read_windows(const std::filesystem::path& file,
                                 const std::vector<std::string>& subjects) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw UserError("window cache: cannot open " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kWindowMagic, sizeof(magic)) != 0) {
    throw UserError("window cache: bad magic in " + file.string());
  }
  const auto n = read_pod<std::uint64_t>(in);
  const auto channels = read_pod<std::uint32_t>(in);
  const auto window_len = read_pod<std::uint32_t>(in);
  std::vector<Window> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Window w;
    w.channels = static_cast<int>(channels);
    w.length = static_cast<int>(window_len);
    const auto subj = read_pod<std::uint32_t>(in);
    if (subj >= subjects.size()) throw InternalError("window cache: subject index out of range");
    w.subject_id = subjects[subj];
    w.label = read_pod<std::int32_t>(in);
    w.data.resize(static_cast<std::size_t>(channels) * window_len);
    in.read(reinterpret_cast<char*>(w.data.data()),
            static_cast<std::streamsize>(sizeof(double) * w.data.size()));
    if (!in) throw InternalError("window cache: truncated window data");
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

void save_split(const DatasetSplit& split, const std::filesystem::path& dir,
                const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::vector<std::string> subjects;
  auto add_subjects = [&](const std::vector<Window>& ws) {
    for (const auto& w : ws) {
      if (std::find(subjects.begin(), subjects.end(), w.subject_id) == subjects.end()) {
        subjects.push_back(w.subject_id);
      }
    }
  };
  add_subjects(split.train);
  add_subjects(split.test);

  const int channels = split.train.empty() ? 0 : split.train[0].channels;
  const int window_len = split.train.empty() ? 0 : split.train[0].length;

  json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["cache_format_version"] = kCacheFormatVersion;
  meta["config_hash"] = config_hash;
  meta["name"] = split.name;
  meta["class_set"] = split.class_set;
  meta["channels"] = channels;
  meta["window_len"] = window_len;
  meta["subjects"] = subjects;
  meta["stats"] = {{"mean", split.stats.mean}, {"std", split.stats.std_dev}};
  meta["counts"] = {{"train", split.train.size()}, {"test", split.test.size()}};

  std::ofstream mf(dir / "meta.json", std::ios::trunc);
  mf << meta.dump(2) << "\n";
  write_windows(dir / "train.kdw", split.train, subjects, channels, window_len);
  write_windows(dir / "test.kdw", split.test, subjects, channels, window_len);
}

DatasetSplit load_split(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw UserError("window cache: cannot open " + (dir / "meta.json").string());
  json meta = json::parse(mf);
  if (meta.at("cache_format_version").get<int>() != kCacheFormatVersion) {
    throw UserError("window cache: unsupported format version in " + dir.string());
  }
  DatasetSplit split;
  split.name = meta.at("name").get<std::string>();
  split.class_set = meta.at("class_set").get<std::vector<int>>();
  split.stats.mean = meta.at("stats").at("mean").get<std::vector<double>>();
  split.stats.std_dev = meta.at("stats").at("std").get<std::vector<double>>();
  const auto subjects = meta.at("subjects").get<std::vector<std::string>>();
  split.train = read_windows(dir / "train.kdw", subjects);
  split.test = read_windows(dir / "test.kdw", subjects);
  return split;
}

std::string split_config_hash(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) return {};
  json meta = json::parse(mf, nullptr, false);
  if (meta.is_discarded() || !meta.contains("config_hash")) return {};
  return meta["config_hash"].get<std::string>();
}

}  // namespace kdts::dataio
