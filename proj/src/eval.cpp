#include "kdts/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "kdts/error.hpp"

namespace kdts::eval {

using nlohmann::json;

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw UserError("accuracy: need non-empty prediction/label sequences of equal length");
  }
  long correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
}

int argmax(std::span<const double> row) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i) {
    if (row[i] > row[best]) best = i;  // strict: ties keep the lowest index
  }
  return best;
}

std::vector<int> argmax_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(argmax(r));
  return out;
}

double ece(const std::vector<std::vector<double>>& probabilities, std::span<const int> labels,
           int n_bins) {
  if (probabilities.empty() || probabilities.size() != labels.size()) {
    throw UserError("ece: need non-empty probability/label sequences of equal length");
  }
  if (n_bins < 1) throw UserError("ece: n_bins must be >= 1");

  const std::size_t n = probabilities.size();
  std::vector<double> bin_conf(n_bins, 0.0), bin_acc(n_bins, 0.0);
  std::vector<long> bin_count(n_bins, 0);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = probabilities[i];
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw UserError("ece: malformed probability row");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw UserError("ece: probability row does not sum to 1");
    }
    const int pred = argmax(row);
    const double conf = row[pred];
    int bin = static_cast<int>(conf * n_bins);
    if (bin >= n_bins) bin = n_bins - 1;  // confidence exactly 1
    bin_conf[bin] += conf;
    bin_acc[bin] += (pred == labels[i]) ? 1.0 : 0.0;
    ++bin_count[bin];
  }

  double e = 0.0;
  for (int m = 0; m < n_bins; ++m) {
    if (bin_count[m] == 0) continue;
    const double w = static_cast<double>(bin_count[m]) / static_cast<double>(n);
    e += w * std::abs(bin_acc[m] / bin_count[m] - bin_conf[m] / bin_count[m]);
  }
  return 100.0 * e;
}

namespace {

std::pair<double, double> mean_var(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, ss / (n - 1.0)};
}

}  // namespace

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw UserError("welch_ttest: each sample needs at least 2 values");
  }
  const auto [ma, va] = mean_var(a);
  const auto [mb, vb] = mean_var(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;

  if (se2 == 0.0) {
    if (ma == mb) return {0.0, 1.0, na + nb - 2.0};  // by convention
    throw UserError("welch_ttest: zero variance in both samples with unequal means");
  }

  TTestResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  if (r.p > 1.0) r.p = 1.0;
  return r;
}

Aggregate aggregate(std::vector<double> values) {
  if (values.empty()) throw UserError("aggregate: no values");
  Aggregate agg;
  agg.n = static_cast<int>(values.size());
  agg.raw = std::move(values);
  agg.mean = std::accumulate(agg.raw.begin(), agg.raw.end(), 0.0) / agg.n;
  if (agg.n > 1) {
    double ss = 0.0;
    for (double v : agg.raw) ss += (v - agg.mean) * (v - agg.mean);
    agg.std_dev = std::sqrt(ss / (agg.n - 1));
  }
  return agg;
}

json EvalReport::to_json() const {
  json j;
  j["accuracy_pct"] = accuracy_pct;
  j["ece_pct"] = ece_pct;
  j["per_class_accuracy"] = per_class_accuracy;
  j["confusion"] = confusion;
  j["n_samples"] = n_samples;
  j["run_id"] = run_id;
  j["checkpoint_epoch"] = checkpoint_epoch;
  return j;
}

EvalReport evaluate_windows(nn::Network& net, const std::vector<dataio::Window>& windows,
                            const dataio::ChannelStats& stats,
                            const std::vector<int>& class_set, int batch) {
  if (windows.empty()) throw UserError("evaluate: no windows");
  const int n_classes = static_cast<int>(class_set.size());
  const int C = windows[0].channels;
  const int T = windows[0].length;

  auto class_index = [&](int label) {
    const auto it = std::find(class_set.begin(), class_set.end(), label);
    if (it == class_set.end()) throw UserError("evaluate: label outside class set");
    return static_cast<int>(it - class_set.begin());
  };

  EvalReport rep;
  rep.n_samples = static_cast<long>(windows.size());
  rep.confusion.assign(n_classes, std::vector<long>(n_classes, 0));

  std::vector<std::vector<double>> probs;
  probs.reserve(windows.size());
  std::vector<int> labels;
  labels.reserve(windows.size());
  long correct = 0;

  for (std::size_t start = 0; start < windows.size(); start += batch) {
    const int bs = static_cast<int>(std::min<std::size_t>(batch, windows.size() - start));
    nn::Tensor x(bs, C, T);
    for (int b = 0; b < bs; ++b) {
      dataio::Window w = windows[start + b];
      dataio::apply_stats(w, stats);
      std::copy(w.data.begin(), w.data.end(), x.sample(b));
    }
    const nn::Tensor logits = net.forward(x, /*training=*/false);
    for (int b = 0; b < bs; ++b) {
      std::span<const double> row(logits.sample(b), static_cast<std::size_t>(n_classes));
      // softmax for calibration
      const double m = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      std::vector<double> p(n_classes);
      for (int c = 0; c < n_classes; ++c) z += (p[c] = std::exp(row[c] - m));
      for (double& v : p) v /= z;

      const int pred = argmax(row);
      const int truth = class_index(windows[start + b].label);
      rep.confusion[truth][pred]++;
      if (pred == truth) ++correct;
      probs.push_back(std::move(p));
      labels.push_back(truth);
    }
  }

  rep.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(rep.n_samples);
  rep.ece_pct = ece(probs, labels);
  rep.per_class_accuracy.assign(n_classes, 0.0);
  for (int c = 0; c < n_classes; ++c) {
    const long row_total = std::accumulate(rep.confusion[c].begin(), rep.confusion[c].end(), 0L);
    rep.per_class_accuracy[c] =
        row_total == 0 ? 0.0 : 100.0 * rep.confusion[c][c] / static_cast<double>(row_total);
  }
  return rep;
}

json TimingResult::to_json() const {
  json j;
  j["total_seconds"] = total_seconds;
  j["avg_ms_per_sample"] = avg_ms_per_sample;
  j["n_samples"] = n_samples;
  j["warmup"] = warmup;
  j["device"] = device;
  j["note"] = note;
  return j;
}

TimingResult timing_benchmark(nn::Network& net, const std::vector<dataio::Window>& windows,
                              const dataio::ChannelStats& stats, int warmup) {
  if (windows.size() < 100) throw UserError("timing_benchmark: need at least 100 samples");
  const int C = windows[0].channels;
  const int T = windows[0].length;

  // Pre-normalized single-sample tensors so only the forward pass is timed.
  std::vector<nn::Tensor> inputs;
  inputs.reserve(windows.size());
  for (const auto& win : windows) {
    dataio::Window w = win;
    dataio::apply_stats(w, stats);
    nn::Tensor x(1, C, T);
    std::copy(w.data.begin(), w.data.end(), x.v.begin());
    inputs.push_back(std::move(x));
  }

  volatile double sink = 0.0;  // keep the forward passes observable
  for (int i = 0; i < warmup; ++i) {
    const auto y = net.forward(inputs[i % inputs.size()], false);
    sink = sink + y.v[0];
  }

  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& x : inputs) {
    const auto y = net.forward(x, false);
    sink = sink + y.v[0];
  }
  const auto t1 = std::chrono::steady_clock::now();

  TimingResult r;
  r.total_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.n_samples = static_cast<int>(inputs.size());
  r.avg_ms_per_sample = 1000.0 * r.total_seconds / r.n_samples;
  r.warmup = warmup;
  r.device = "cpu";
  r.note = "batch size 1; run exclusively, without concurrent load";
  return r;
}

}  // namespace kdts::eval
