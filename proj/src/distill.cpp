#include "kdts/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "kdts/error.hpp"
#include "kdts/eval.hpp"
#include "kdts/version.hpp"

namespace kdts::distill {

using nlohmann::json;

std::string to_string(Mode m) { return m == Mode::full ? "full" : "eskd"; }

Mode mode_from_string(const std::string& name) {
  if (name == "full") return Mode::full;
  if (name == "eskd") return Mode::eskd;
  throw UserError("distill: unknown mode '" + name + "' (expected full|eskd)");
}

void KDConfig::validate() const {
  if (!(tau >= 1.0)) throw UserError("distill: tau must be >= 1");
  if (!(lam >= 0.0 && lam <= 1.0)) throw UserError("distill: lambda must be in [0, 1]");
}

json KDConfig::to_json() const {
  return json{{"tau", tau}, {"lambda", lam}, {"mode", to_string(mode)}};
}

KDConfig KDConfig::from_json(const json& j) {
  KDConfig c;
  c.tau = j.value("tau", c.tau);
  c.lam = j.value("lambda", c.lam);
  c.mode = mode_from_string(j.value("mode", "full"));
  c.validate();
  return c;
}

void TrainingSchedule::validate() const {
  if (total_epochs < 1) throw UserError("schedule: total_epochs must be >= 1");
  if (!(initial_lr >= 0.0)) throw UserError("schedule: initial_lr must be >= 0");
  if (!(first_drop.factor > 0.0 && first_drop.factor <= 1.0)) {
    throw UserError("schedule: first drop factor must be in (0, 1]");
  }
  if (!(periodic_factor > 0.0 && periodic_factor <= 1.0)) {
    throw UserError("schedule: periodic factor must be in (0, 1]");
  }
  if (batch_size < 1) throw UserError("schedule: batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UserError("schedule: momentum must be in [0, 1)");
  if (checkpoint_every < 1) throw UserError("schedule: checkpoint_every must be >= 1");
}

int TrainingSchedule::student_epochs(Mode mode) const {
  if (mode == Mode::full) return total_epochs;
  return (3 * total_epochs + 3) / 4;  // ceil(0.75 * t)
}

json TrainingSchedule::to_json() const {
  json j;
  j["total_epochs"] = total_epochs;
  j["initial_lr"] = initial_lr;
  j["first_drop"] = {{"epoch", first_drop.epoch}, {"factor", first_drop.factor}};
  j["periodic_factor"] = periodic_factor;
  j["batch_size"] = batch_size;
  j["momentum"] = momentum;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

TrainingSchedule TrainingSchedule::from_json(const json& j) {
  TrainingSchedule s;
  s.total_epochs = j.value("total_epochs", s.total_epochs);
  s.initial_lr = j.value("initial_lr", s.initial_lr);
  if (j.contains("first_drop")) {
    s.first_drop.epoch = j.at("first_drop").value("epoch", s.first_drop.epoch);
    s.first_drop.factor = j.at("first_drop").value("factor", s.first_drop.factor);
  }
  s.periodic_factor = j.value("periodic_factor", s.periodic_factor);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.momentum = j.value("momentum", s.momentum);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
  s.validate();
  return s;
}

double lr_at(int epoch, const TrainingSchedule& sched) {
  if (epoch < 1 || epoch > sched.total_epochs) {
    throw UserError("lr_at: epoch out of range");
  }
  double lr = sched.initial_lr;
  if (epoch > sched.first_drop.epoch) lr *= sched.first_drop.factor;
  const int period = sched.total_epochs / 3;
  if (period >= 1) {
    const int drops = (epoch - 1) / period;
    for (int i = 0; i < drops; ++i) lr *= sched.periodic_factor;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

void check_finite(std::span<const double> logits, const char* who) {
  for (double v : logits) {
    if (!std::isfinite(v)) throw UserError(std::string(who) + ": non-finite logits");
  }
}

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

std::vector<double> softmax_with_temperature(std::span<const double> logits, double tau) {
  if (logits.empty()) throw UserError("softmax: empty logits");
  if (!(tau > 0.0)) throw UserError("softmax: tau must be > 0");
  check_finite(logits, "softmax");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= tau;
  const double lse = log_sum_exp(scaled);
  std::vector<double> p(scaled.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(scaled[i] - lse);
  return p;
}

LossValue cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw UserError("cross_entropy: label out of range");
  }
  check_finite(logits, "cross_entropy");
  const double lse = log_sum_exp(logits);
  LossValue out;
  out.ce = lse - logits[label];
  out.total = out.ce;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = std::exp(logits[i] - lse);
  }
  out.grad[label] -= 1.0;
  return out;
}

LossValue kd_loss(std::span<const double> student_logits,
                  std::span<const double> teacher_logits, int label, const KDConfig& cfg) {
  if (student_logits.size() != teacher_logits.size()) {
    throw UserError("kd_loss: class dimension mismatch");
  }
  cfg.validate();
  check_finite(teacher_logits, "kd_loss");

  LossValue out = cross_entropy(student_logits, label);  // fills ce and grad = p - y
  const double lam = cfg.lam;
  const double tau = cfg.tau;

  // Softened distributions in log space; f_t is a constant target. Working
  // with log f_t directly makes KL(p || p) exactly zero.
  std::vector<double> ft(teacher_logits.size()), log_ft(teacher_logits.size()),
      log_fs(student_logits.size());
  {
    std::vector<double> ts(teacher_logits.begin(), teacher_logits.end());
    for (double& v : ts) v /= tau;
    const double lse_t = log_sum_exp(ts);
    for (std::size_t i = 0; i < ft.size(); ++i) {
      log_ft[i] = ts[i] - lse_t;
      ft[i] = std::exp(log_ft[i]);
    }

    std::vector<double> ss(student_logits.begin(), student_logits.end());
    for (double& v : ss) v /= tau;
    const double lse_s = log_sum_exp(ss);
    for (std::size_t i = 0; i < log_fs.size(); ++i) log_fs[i] = ss[i] - lse_s;
  }

  double kl = 0.0;
  for (std::size_t i = 0; i < ft.size(); ++i) {
    kl += ft[i] * (log_ft[i] - log_fs[i]);
  }
  if (kl < 0.0) kl = 0.0;  // guard tiny negative round-off

  out.kd = lam * tau * tau * kl;
  out.total = (1.0 - lam) * out.ce + out.kd;
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    const double g_kd = tau * (std::exp(log_fs[i]) - ft[i]);
    out.grad[i] = (1.0 - lam) * out.grad[i] + lam * g_kd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training engine
// ---------------------------------------------------------------------------

namespace {

int class_index(const std::vector<int>& class_set, int label) {
  const auto it = std::find(class_set.begin(), class_set.end(), label);
  if (it == class_set.end()) {
    throw UserError("training: window label " + std::to_string(label) + " outside class set");
  }
  return static_cast<int>(it - class_set.begin());
}

double test_accuracy(nn::Network& net, const dataio::DatasetSplit& split,
                     const std::vector<int>& test_labels, int eval_batch) {
  const int C = split.test[0].channels;
  const int T = split.test[0].length;
  const int n_classes = static_cast<int>(split.class_set.size());
  long correct = 0;
  for (std::size_t start = 0; start < split.test.size(); start += eval_batch) {
    const int bs = static_cast<int>(std::min<std::size_t>(eval_batch, split.test.size() - start));
    nn::Tensor x(bs, C, T);
    for (int b = 0; b < bs; ++b) {
      dataio::Window w = split.test[start + b];
      dataio::apply_stats(w, split.stats);
      std::copy(w.data.begin(), w.data.end(), x.sample(b));
    }
    const nn::Tensor logits = net.forward(x, false);
    for (int b = 0; b < bs; ++b) {
      std::span<const double> row(logits.sample(b), static_cast<std::size_t>(n_classes));
      if (eval::argmax(row) == test_labels[start + b]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(split.test.size());
}

class RunWriter {
 public:
  RunWriter(const std::filesystem::path& dir, const models::ModelSpec& spec,
            const std::string& config_hash)
      : dir_(dir), spec_(spec), config_hash_(config_hash) {
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_ / "checkpoints");
    metrics_.open(dir_ / "metrics.jsonl", std::ios::trunc);
    if (!metrics_) throw UserError("training: cannot write to " + dir_.string());
  }

  bool active() const { return !dir_.empty(); }

  void record(const EpochRecord& r) {
    if (!active()) return;
    json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_ce"] = r.train_ce;
    j["train_kd"] = r.train_kd;
    j["test_accuracy"] = r.test_accuracy;
    metrics_ << j.dump() << "\n";
    metrics_.flush();
  }

  std::filesystem::path write_checkpoint(const nn::Network& net, const std::string& name,
                                         int epoch, double train_loss, double acc) {
    if (!active()) return {};
    models::CheckpointMeta meta;
    meta.spec = spec_;
    meta.epoch = epoch;
    meta.train_loss = train_loss;
    meta.test_accuracy = acc;
    meta.config_hash = config_hash_;
    const auto file = dir_ / "checkpoints" / name;
    models::save_checkpoint(file, net, meta);
    return file;
  }

  void summary(const TrainedRun& run, const std::string& kind, int epochs,
               const json& extra) {
    if (!active()) return;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["config_hash"] = run.config_hash;
    j["seed"] = run.seed;
    j["model"] = run.spec.to_json();
    j["model_label"] = run.spec.label();
    j["kind"] = kind;
    j["epochs"] = epochs;
    j["best_epoch"] = run.best.epoch;
    j["best_accuracy"] = run.best.test_accuracy;
    j["final_accuracy"] = run.records.back().test_accuracy;
    j["final_train_ce"] = run.records.back().train_ce;
    j["final_train_kd"] = run.records.back().train_kd;
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    std::ofstream out(dir_ / "summary.json", std::ios::trunc);
    out << j.dump(2) << "\n";
  }

 private:
  std::filesystem::path dir_;
  models::ModelSpec spec_;
  std::string config_hash_;
  std::ofstream metrics_;
};

TrainedRun run_training(const models::ModelSpec& spec, const dataio::DatasetSplit& split,
                        const TrainingSchedule& sched, int epochs, const augment::Policy& aug,
                        std::uint64_t seed, nn::Network* teacher, const KDConfig* kd,
                        const TrainOptions& opts, const std::string& kind) {
  spec.validate();
  sched.validate();
  aug.validate();
  if (split.train.empty() || split.test.empty()) {
    throw UserError("training: split needs non-empty train and test sets");
  }
  if (static_cast<int>(split.class_set.size()) != spec.n_classes) {
    throw UserError("training: model has " + std::to_string(spec.n_classes) +
                    " classes but split has " + std::to_string(split.class_set.size()));
  }
  if (split.train[0].channels != spec.in_channels) {
    throw UserError("training: model expects " + std::to_string(spec.in_channels) +
                    " channels but windows have " + std::to_string(split.train[0].channels));
  }

  const int C = split.train[0].channels;
  const int T = split.train[0].length;
  const int n_classes = spec.n_classes;
  const std::size_t n_train = split.train.size();

  std::vector<int> train_labels(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    train_labels[i] = class_index(split.class_set, split.train[i].label);
  }
  std::vector<int> test_labels(split.test.size());
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    test_labels[i] = class_index(split.class_set, split.test[i].label);
  }

  TrainedRun run;
  run.spec = spec;
  run.seed = seed;
  run.config_hash = opts.config_hash;
  run.dir = opts.run_dir;

  nn::Network net = models::build(spec);
  {
    auto init_rng = RngStream::derive(seed, "init");
    net.init_weights(init_rng);
  }
  nn::Sgd sgd(sched.momentum);
  RunWriter writer(opts.run_dir, spec, opts.config_hash);

  run.best.test_accuracy = -1.0;
  std::vector<std::size_t> order(n_train);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const double lr = lr_at(epoch, sched);

    // Deterministic shuffle keyed by (seed, epoch).
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    {
      auto rng = RngStream::derive(seed, "shuffle", static_cast<std::uint64_t>(epoch));
      for (std::size_t i = n_train; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
      }
    }

    double ce_sum = 0.0, kd_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += sched.batch_size) {
      const int bs = static_cast<int>(std::min<std::size_t>(sched.batch_size, n_train - start));
      nn::Tensor x(bs, C, T);
      nn::Tensor x_clean;
      if (teacher != nullptr && opts.teacher_sees_clean) x_clean = nn::Tensor(bs, C, T);

      for (int b = 0; b < bs; ++b) {
        const std::size_t idx = order[start + b];
        dataio::Window w =
            augment::transform(split.train[idx], aug, seed, static_cast<std::uint64_t>(epoch), idx);
        dataio::apply_stats(w, split.stats);
        std::copy(w.data.begin(), w.data.end(), x.sample(b));
        if (teacher != nullptr && opts.teacher_sees_clean) {
          dataio::Window clean = split.train[idx];
          dataio::apply_stats(clean, split.stats);
          std::copy(clean.data.begin(), clean.data.end(), x_clean.sample(b));
        }
      }

      nn::Tensor teacher_logits;
      if (teacher != nullptr) {
        teacher_logits = teacher->forward(opts.teacher_sees_clean ? x_clean : x, false);
        if (teacher_logits.channels != n_classes) {
          throw UserError("train_kd: teacher emits " + std::to_string(teacher_logits.channels) +
                          " classes but student expects " + std::to_string(n_classes));
        }
      }

      nn::Tensor logits = net.forward(x, true);
      for (double v : logits.v) {
        if (!std::isfinite(v)) {
          throw InternalError("training diverged: non-finite logits at epoch " +
                              std::to_string(epoch));
        }
      }
      nn::Tensor dlogits(bs, n_classes, 1);
      const double inv_bs = 1.0 / bs;

      for (int b = 0; b < bs; ++b) {
        const std::size_t idx = order[start + b];
        std::span<const double> row(logits.sample(b), static_cast<std::size_t>(n_classes));
        LossValue lv;
        if (teacher != nullptr) {
          std::span<const double> trow(teacher_logits.sample(b),
                                       static_cast<std::size_t>(n_classes));
          lv = kd_loss(row, trow, train_labels[idx], *kd);
        } else {
          lv = cross_entropy(row, train_labels[idx]);
        }
        if (!std::isfinite(lv.total)) {
          throw InternalError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch));
        }
        ce_sum += lv.ce;
        kd_sum += lv.kd;
        for (int c = 0; c < n_classes; ++c) dlogits.at(b, c, 0) = lv.grad[c] * inv_bs;
      }

      net.zero_grad();
      net.backward(dlogits);
      sgd.step(net.params(), lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_ce = ce_sum / static_cast<double>(n_train);
    rec.train_kd = kd_sum / static_cast<double>(n_train);
    rec.test_accuracy = test_accuracy(net, split, test_labels, opts.eval_batch);
    run.records.push_back(rec);
    writer.record(rec);

    const bool periodic = (epoch % sched.checkpoint_every == 0) || epoch == epochs;
    if (periodic) {
      StoredCheckpoint ck;
      ck.epoch = epoch;
      ck.test_accuracy = rec.test_accuracy;
      if (writer.active()) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
        ck.file = writer.write_checkpoint(net, name, epoch, rec.train_ce, rec.test_accuracy);
      } else {
        ck.state = net.state();
      }
      run.checkpoints.push_back(std::move(ck));
    }
    if (rec.test_accuracy > run.best.test_accuracy) {
      run.best.epoch = epoch;
      run.best.test_accuracy = rec.test_accuracy;
      run.best.state = net.state();  // kept in memory so any epoch can win
    }
  }

  if (writer.active()) {
    nn::Network best_net = models::build(spec);
    best_net.load_state(run.best.state);
    run.best.file = writer.write_checkpoint(best_net, "best.ckpt", run.best.epoch, 0.0,
                                            run.best.test_accuracy);
    const auto& last = run.checkpoints.back();
    std::filesystem::copy_file(last.file, run.dir / "checkpoints" / "final.ckpt",
                               std::filesystem::copy_options::overwrite_existing);
    json extra;
    if (kd != nullptr) extra["kd"] = kd->to_json();
    extra["augmentation"] = aug.to_json();
    writer.summary(run, kind, epochs, extra);
  }
  return run;
}

}  // namespace

TrainedRun train_scratch(const models::ModelSpec& spec, const dataio::DatasetSplit& split,
                         const TrainingSchedule& sched, const augment::Policy& aug,
                         std::uint64_t seed, const TrainOptions& opts) {
  return run_training(spec, split, sched, sched.total_epochs, aug, seed, nullptr, nullptr, opts,
                      "scratch");
}

TrainedRun train_kd(const models::ModelSpec& student_spec, nn::Network& teacher,
                    const dataio::DatasetSplit& split, const TrainingSchedule& sched,
                    const KDConfig& cfg, const augment::Policy& aug, std::uint64_t seed,
                    const TrainOptions& opts) {
  cfg.validate();
  const std::uint64_t teacher_hash = teacher.state_hash();
  TrainedRun run = run_training(student_spec, split, sched, sched.student_epochs(cfg.mode), aug,
                                seed, &teacher, &cfg, opts, "kd");
  if (teacher.state_hash() != teacher_hash) {
    throw InternalError("train_kd: teacher weights changed during distillation");
  }
  return run;
}

TrainedRun train_kd(const models::ModelSpec& student_spec,
                    const std::filesystem::path& teacher_ckpt,
                    const dataio::DatasetSplit& split, const TrainingSchedule& sched,
                    const KDConfig& cfg, const augment::Policy& aug, std::uint64_t seed,
                    const TrainOptions& opts) {
  auto loaded = models::load_checkpoint(teacher_ckpt);
  if (loaded.meta.spec.n_classes != student_spec.n_classes) {
    throw UserError("train_kd: teacher has " + std::to_string(loaded.meta.spec.n_classes) +
                    " classes but student expects " + std::to_string(student_spec.n_classes));
  }
  return train_kd(student_spec, loaded.net, split, sched, cfg, aug, seed, opts);
}

const StoredCheckpoint& select_eskd_teacher(const TrainedRun& run) {
  if (run.checkpoints.empty()) throw UserError("select_eskd_teacher: run has no checkpoints");
  const StoredCheckpoint* best = &run.checkpoints.front();
  for (const auto& ck : run.checkpoints) {
    if (ck.test_accuracy > best->test_accuracy) best = &ck;  // ties keep the earliest
  }
  return *best;
}

nn::Network restore(const models::ModelSpec& spec, const StoredCheckpoint& ckpt) {
  if (!ckpt.state.empty()) {
    nn::Network net = models::build(spec);
    net.load_state(ckpt.state);
    return net;
  }
  if (!ckpt.file.empty()) return models::load_checkpoint(ckpt.file).net;
  throw InternalError("restore: checkpoint has neither in-memory state nor a file");
}

}  // namespace kdts::distill
