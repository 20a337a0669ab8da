#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "kdts/distill.hpp"
#include "kdts/error.hpp"
#include "kdts/models.hpp"
#include "kdts/rng.hpp"

using namespace kdts;
using namespace kdts::models;

namespace {

ModelSpec wrn(int depth, int width, int in = 3, int classes = 14) {
  ModelSpec s;
  s.family = Family::wrn;
  s.depth = depth;
  s.width = width;
  s.in_channels = in;
  s.n_classes = classes;
  return s;
}

ModelSpec resnet(int width, int in = 3, int classes = 14) {
  ModelSpec s;
  s.family = Family::resnet18;
  s.width = width;
  s.in_channels = in;
  s.n_classes = classes;
  return s;
}

nn::Tensor random_input(int b, int c, int t, std::uint64_t seed) {
  nn::Tensor x(b, c, t);
  RngStream rng(seed, 0, 0);
  for (double& v : x.v) v = rng.next_gaussian();
  return x;
}

}  // namespace

TEST_CASE("model zoo parameter counts") {
  // WRN16/28 and ResNet18 variants at 3 input channels, 14 classes
  CHECK(build(wrn(16, 1)).parameter_count() == 61374);
  CHECK(build(wrn(16, 2)).parameter_count() == 240318);
  CHECK(build(wrn(16, 3)).parameter_count() == 536254);
  CHECK(build(wrn(16, 4)).parameter_count() == 949438);
  CHECK(build(wrn(16, 6)).parameter_count() == 2127550);
  CHECK(build(wrn(16, 8)).parameter_count() == 3774654);
  CHECK(build(wrn(28, 1)).parameter_count() == 126782);
  CHECK(build(wrn(28, 2)).parameter_count() == 500158);
  CHECK(build(wrn(28, 3)).parameter_count() == 1119550);
  CHECK(build(wrn(28, 4)).parameter_count() == 1985214);
  CHECK(build(wrn(28, 6)).parameter_count() == 4455358);
  CHECK(build(resnet(8)).parameter_count() == 62182);
  CHECK(build(resnet(16)).parameter_count() == 244158);
  CHECK(build(resnet(24)).parameter_count() == 545942);
  CHECK(build(resnet(32)).parameter_count() == 967534);
  CHECK(build(resnet(48)).parameter_count() == 2170142);
  CHECK(build(resnet(64)).parameter_count() == 3851982);
}

TEST_CASE("count is a pure function of the spec") {
  const auto a = build(wrn(16, 2, 5, 7)).parameter_count();
  const auto b = build(wrn(16, 2, 5, 7)).parameter_count();
  CHECK(a == b);
}

TEST_CASE("a lone linear layer counts weights plus bias") {
  auto seq = std::make_unique<nn::Sequential>();
  seq->emplace<nn::Linear>(10, 14);
  nn::Network net(std::move(seq));
  CHECK(net.parameter_count() == 10 * 14 + 14);
}

TEST_CASE("invalid specs are rejected") {
  CHECK_THROWS_AS(build(wrn(15, 1)), UserError);  // (15-4) % 6 != 0
  CHECK_THROWS_AS(build(wrn(16, 0)), UserError);
  ModelSpec even_kernel = wrn(16, 1);
  even_kernel.kernel_size = 4;
  CHECK_THROWS_AS(build(even_kernel), UserError);
}

TEST_CASE("forward maps (B, C, T) to (B, classes) logits") {
  auto net = build(wrn(16, 1, 3, 14));
  auto rng = RngStream::derive(7, "init");
  net.init_weights(rng);
  const auto x = random_input(5, 3, 100, 1);
  const auto y = net.forward(x, false);
  CHECK(y.batch == 5);
  CHECK(y.channels == 14);
  CHECK(y.length == 1);
  for (double v : y.v) CHECK(std::isfinite(v));
}

TEST_CASE("zero head gives all-zero logits") {
  auto net = build(wrn(16, 1, 2, 6));
  auto rng = RngStream::derive(8, "init");
  net.init_weights(rng);
  // the head is visited last: weight then bias
  auto params = net.params();
  std::fill(params[params.size() - 2]->value.begin(), params[params.size() - 2]->value.end(), 0.0);
  std::fill(params[params.size() - 1]->value.begin(), params[params.size() - 1]->value.end(), 0.0);
  const auto y = net.forward(random_input(3, 2, 64, 2), false);
  for (double v : y.v) CHECK(v == 0.0);
}

TEST_CASE("inference is batch invariant with frozen statistics") {
  for (const auto& spec : {wrn(16, 1, 3, 5), resnet(4, 3, 5)}) {
    auto net = build(spec);
    auto rng = RngStream::derive(9, "init");
    net.init_weights(rng);
    // make running stats non-trivial
    net.forward(random_input(8, 3, 64, 3), true);

    const auto single = random_input(1, 3, 64, 4);
    nn::Tensor pair(2, 3, 64);
    std::copy(single.v.begin(), single.v.end(), pair.sample(0));
    std::copy(single.v.begin(), single.v.end(), pair.sample(1));

    const auto y1 = net.forward(single, false);
    const auto y2 = net.forward(pair, false);
    for (int c = 0; c < 5; ++c) {
      CHECK(y1.at(0, c, 0) == doctest::Approx(y2.at(0, c, 0)).epsilon(1e-12));
      CHECK(y2.at(0, c, 0) == doctest::Approx(y2.at(1, c, 0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("non-finite input errors out") {
  auto net = build(wrn(16, 1, 2, 3));
  auto x = random_input(1, 2, 32, 5);
  x.v[7] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(net.forward(x, false));
}

TEST_CASE("inference is deterministic given weights and input") {
  auto net = build(resnet(4, 2, 4));
  auto rng = RngStream::derive(10, "init");
  net.init_weights(rng);
  const auto x = random_input(3, 2, 80, 6);
  const auto a = net.forward(x, false);
  const auto b = net.forward(x, false);
  CHECK(a.v == b.v);
}

namespace {

// Mean cross entropy of the network on a fixed batch; the loss used by the
// finite-difference probe.
double batch_loss(nn::Network& net, const nn::Tensor& x, const std::vector<int>& labels,
                  nn::Tensor* dlogits_out = nullptr) {
  const auto logits = net.forward(x, true);
  double total = 0.0;
  nn::Tensor dlogits(logits.batch, logits.channels, 1);
  for (int b = 0; b < logits.batch; ++b) {
    std::span<const double> row(logits.sample(b), static_cast<std::size_t>(logits.channels));
    const auto lv = distill::cross_entropy(row, labels[b]);
    total += lv.total;
    for (int c = 0; c < logits.channels; ++c) {
      dlogits.at(b, c, 0) = lv.grad[c] / logits.batch;
    }
  }
  if (dlogits_out != nullptr) *dlogits_out = dlogits;
  return total / logits.batch;
}

void finite_difference_check(const ModelSpec& spec, int T, int batch) {
  auto net = build(spec);
  auto rng = RngStream::derive(77, "init");
  net.init_weights(rng);

  const auto x = random_input(batch, spec.in_channels, T, 11);
  std::vector<int> labels(batch);
  RngStream lab(12, 0, 0);
  for (auto& l : labels) l = static_cast<int>(lab.next_int(0, spec.n_classes - 1));

  nn::Tensor dlogits;
  batch_loss(net, x, labels, &dlogits);
  net.zero_grad();
  net.backward(dlogits);

  // grab analytic grads before the probing passes disturb anything
  auto params = net.params();
  std::vector<std::vector<double>> analytic;
  for (const auto* p : params) analytic.push_back(p->grad);

  RngStream pick(13, 0, 0);
  int checked = 0;
  for (int probe = 0; probe < 24; ++probe) {
    const auto pi = static_cast<std::size_t>(pick.next_int(0, static_cast<std::int64_t>(params.size()) - 1));
    if (params[pi]->value.empty()) continue;
    const auto wi = static_cast<std::size_t>(
        pick.next_int(0, static_cast<std::int64_t>(params[pi]->value.size()) - 1));

    double& w = params[pi]->value[wi];
    const double keep = w;
    const double h = 1e-5 * std::max(1.0, std::abs(keep));
    w = keep + h;
    const double up = batch_loss(net, x, labels);
    w = keep - h;
    const double down = batch_loss(net, x, labels);
    w = keep;

    const double fd = (up - down) / (2.0 * h);
    const double an = analytic[pi][wi];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    INFO("param ", pi, " (", params[pi]->name, ") index ", wi, ": analytic ", an, " fd ", fd);
    CHECK(rel < 1e-4);
    ++checked;
  }
  CHECK(checked >= 20);
}

}  // namespace

TEST_CASE("gradients match central finite differences (wrn 16-1)") {
  finite_difference_check(wrn(16, 1, 2, 3), 32, 4);
}

TEST_CASE("gradients match central finite differences (resnet18)") {
  finite_difference_check(resnet(4, 2, 3), 32, 3);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto net = build(wrn(16, 1, 2, 4));
  auto rng = RngStream::derive(14, "init");
  net.init_weights(rng);
  net.forward(random_input(6, 2, 48, 7), true);  // give running stats real values

  CheckpointMeta meta;
  meta.spec = wrn(16, 1, 2, 4);
  meta.epoch = 17;
  meta.train_loss = 0.25;
  meta.test_accuracy = 81.5;
  meta.config_hash = "deadbeef00000000";

  const auto file = std::filesystem::temp_directory_path() / "kdts_test_ckpt.bin";
  save_checkpoint(file, net, meta);
  auto loaded = load_checkpoint(file);

  CHECK(loaded.meta.epoch == 17);
  CHECK(loaded.meta.test_accuracy == 81.5);
  CHECK(loaded.meta.config_hash == "deadbeef00000000");
  CHECK(loaded.meta.spec == meta.spec);
  CHECK(loaded.net.state() == net.state());
  CHECK(loaded.net.state_hash() == net.state_hash());

  // loaded network behaves identically
  const auto x = random_input(2, 2, 48, 8);
  CHECK(loaded.net.forward(x, false).v == net.forward(x, false).v);
}
