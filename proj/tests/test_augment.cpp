#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "kdts/augment.hpp"
#include "kdts/error.hpp"
#include "kdts/rng.hpp"

using namespace kdts;
using namespace kdts::augment;
using dataio::Window;

namespace {

Window make_window(std::vector<double> values, int channels = 1) {
  Window w;
  w.channels = channels;
  w.length = static_cast<int>(values.size()) / channels;
  w.label = 3;
  w.subject_id = "s";
  w.data = std::move(values);
  return w;
}

Window random_window(RngStream& rng, int channels, int length) {
  Window w;
  w.channels = channels;
  w.length = length;
  w.label = static_cast<int>(rng.next_int(0, 5));
  w.subject_id = "s";
  w.data.resize(static_cast<std::size_t>(channels) * length);
  for (double& v : w.data) v = rng.next_gaussian();
  return w;
}

// Independent oracle: the output must be reproducible by flattening some
// segment [t, t+n) to its head value, n within the allowed footprint.
bool is_valid_removal(const Window& in, const Window& out, double max_frac) {
  const int T = in.length;
  const int limit = static_cast<int>(std::floor(max_frac * T));
  if (out.data == in.data) return true;
  for (int t = 0; t < T; ++t) {
    for (int n = 1; n <= limit && t + n <= T; ++n) {
      bool match = true;
      for (int c = 0; c < in.channels && match; ++c) {
        for (int i = 0; i < T && match; ++i) {
          const double expect = (i >= t && i < t + n) ? in.at(c, t) : in.at(c, i);
          if (out.at(c, i) != expect) match = false;
        }
      }
      if (match) return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("removal flattens a segment to its head value") {
  // (5,7,9,11,13), segment start at the 2nd sample, n=3 -> (5,7,7,7,13)
  const Window w = make_window({5, 7, 9, 11, 13});
  const std::vector<double> expected = {5, 7, 7, 7, 13};

  bool seen_exact = false;
  for (std::uint64_t seed = 0; seed < 400 && !seen_exact; ++seed) {
    RngStream rng(seed, 0, 0);
    const Window out = removal(w, rng, 0.6);  // limit = 3
    REQUIRE(is_valid_removal(w, out, 0.6));
    if (out.data == expected) seen_exact = true;
  }
  CHECK(seen_exact);
}

TEST_CASE("removal with n = 1 is the identity") {
  const Window w = make_window({1, 2, 3, 4, 5});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed, 0, 0);
    // limit = floor(0.2 * 5) = 1, so every draw picks n = 1
    CHECK(removal(w, rng, 0.2).data == w.data);
  }
}

TEST_CASE("removal below one sample consumes no draws") {
  const Window w = make_window({1, 2, 3, 4, 5});
  RngStream used(9, 1, 2), fresh(9, 1, 2);
  const Window out = removal(w, used, 0.1);  // limit = 0
  CHECK(out.data == w.data);
  CHECK(used.next_u64() == fresh.next_u64());
}

TEST_CASE("removal property suite over random windows") {
  RngStream meta(1001, 0, 0);
  for (int i = 0; i < 1000; ++i) {
    const int C = static_cast<int>(meta.next_int(1, 4));
    const int T = static_cast<int>(meta.next_int(4, 64));
    const double max_frac = 0.1 + 0.9 * meta.next_unit();
    Window w = random_window(meta, C, T);
    RngStream rng(7, 0, static_cast<std::uint64_t>(i));
    const Window out = removal(w, rng, max_frac);

    REQUIRE(out.channels == w.channels);
    REQUIRE(out.length == w.length);
    REQUIRE(out.label == w.label);
    REQUIRE(is_valid_removal(w, out, max_frac));

    // footprint bound per channel
    const int limit = static_cast<int>(std::floor(max_frac * T));
    for (int c = 0; c < C; ++c) {
      int changed = 0;
      for (int t = 0; t < T; ++t) {
        if (out.at(c, t) != w.at(c, t)) ++changed;
      }
      CHECK(changed <= limit);
    }
  }
}

TEST_CASE("noise with max_std = 0 returns the input exactly") {
  RngStream meta(5, 0, 0);
  Window w = random_window(meta, 3, 40);
  RngStream rng(6, 0, 0);
  CHECK(noise_injection(w, rng, 0.0).data == w.data);
}

TEST_CASE("noise empirical moments match the drawn sigma") {
  RngStream meta(11, 0, 0);
  const int C = 8, T = 125000;  // 10^6 entries
  Window w = random_window(meta, C, T);

  RngStream rng(12, 3, 4);
  const Window out = noise_injection(w, rng, 0.2);

  // recover the sigma this stream drew
  RngStream replay(12, 3, 4);
  const double sigma = 0.2 * replay.next_unit();
  REQUIRE(sigma > 0.0);

  const std::size_t n = w.data.size();
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = out.data[i] - w.data[i];
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / static_cast<double>(n);
  const double std_dev = std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
  CHECK(std::abs(mean) <= 4.0 * sigma / 1000.0);
  CHECK(std::abs(std_dev - sigma) <= 0.01 * sigma);
}

TEST_CASE("shift by 10 of 50 puts sample 41 first") {
  std::vector<double> values(50);
  for (int i = 0; i < 50; ++i) values[i] = i + 1;  // A_1 ... A_50 (1-based amplitudes)
  const Window w = make_window(values);

  bool seen_k10 = false;
  for (std::uint64_t seed = 0; seed < 400 && !seen_k10; ++seed) {
    RngStream rng(seed, 0, 0);
    const Window out = shift(w, rng, 0.5);
    if (out.at(0, 0) == 41.0) {
      seen_k10 = true;
      // (A_41, A_42, ..., A_1, ..., A_39, A_40)
      for (int i = 0; i < 50; ++i) CHECK(out.at(0, i) == ((40 + i) % 50) + 1);
    }
  }
  CHECK(seen_k10);
}

TEST_CASE("shift with zero draw is identity and preserves multisets otherwise") {
  RngStream meta(21, 0, 0);
  for (int i = 0; i < 1000; ++i) {
    const int C = static_cast<int>(meta.next_int(1, 4));
    const int T = static_cast<int>(meta.next_int(2, 64));
    Window w = random_window(meta, C, T);

    RngStream zero(1, 0, static_cast<std::uint64_t>(i));
    CHECK(shift(w, zero, 1e-9).data == w.data);  // limit 0 -> k = 0

    RngStream rng(2, 0, static_cast<std::uint64_t>(i));
    const Window out = shift(w, rng, 1.0);
    REQUIRE(out.length == w.length);
    for (int c = 0; c < C; ++c) {
      std::vector<double> a(w.data.begin() + static_cast<std::size_t>(c) * T,
                            w.data.begin() + static_cast<std::size_t>(c + 1) * T);
      std::vector<double> b(out.data.begin() + static_cast<std::size_t>(c) * T,
                            out.data.begin() + static_cast<std::size_t>(c + 1) * T);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
  }
}

TEST_CASE("shift rolls all channels jointly") {
  RngStream meta(31, 0, 0);
  Window w = random_window(meta, 3, 32);
  RngStream rng(32, 0, 0);
  const Window out = shift(w, rng, 1.0);
  // recover k from channel 0, verify the same k on every channel
  int k = -1;
  for (int cand = 0; cand < 32; ++cand) {
    bool all = true;
    for (int i = 0; i < 32 && all; ++i) {
      if (out.at(0, (i + cand) % 32) != w.at(0, i)) all = false;
    }
    if (all) {
      k = cand;
      break;
    }
  }
  REQUIRE(k >= 0);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 32; ++i) CHECK(out.at(c, (i + k) % 32) == w.at(c, i));
  }
}

TEST_CASE("mix1 replays as removal then shift on the same stream") {
  Policy p;
  p.kind = Kind::mix1;
  RngStream meta(41, 0, 0);
  for (int i = 0; i < 200; ++i) {
    Window w = random_window(meta, 2, 48);
    RngStream rng(3, 5, static_cast<std::uint64_t>(i));
    const Window composite = mix1(w, rng, p);

    RngStream replay(3, 5, static_cast<std::uint64_t>(i));
    Window manual = removal(w, replay, p.max_removal_frac);
    manual = shift(std::move(manual), replay, p.max_shift_frac);
    CHECK(composite.data == manual.data);
  }
}

TEST_CASE("mix1 degeneracies") {
  RngStream meta(51, 0, 0);
  Window w = random_window(meta, 2, 40);

  // removal limit 0: mix1 equals shift alone on the same stream
  Policy no_removal;
  no_removal.kind = Kind::mix1;
  no_removal.max_removal_frac = 1e-9;
  RngStream a(4, 0, 0), b(4, 0, 0);
  CHECK(mix1(w, a, no_removal).data == shift(w, b, no_removal.max_shift_frac).data);

  // shift limit 0: mix1 equals removal alone
  Policy no_shift;
  no_shift.kind = Kind::mix1;
  no_shift.max_shift_frac = 1e-9;
  RngStream c(5, 0, 0), d(5, 0, 0);
  CHECK(mix1(w, c, no_shift).data == removal(w, d, no_shift.max_removal_frac).data);
}

TEST_CASE("mix2 replays as removal, noise, shift") {
  Policy p;
  p.kind = Kind::mix2;
  RngStream meta(61, 0, 0);
  for (int i = 0; i < 200; ++i) {
    Window w = random_window(meta, 2, 48);
    RngStream rng(6, 2, static_cast<std::uint64_t>(i));
    const Window composite = mix2(w, rng, p);

    RngStream replay(6, 2, static_cast<std::uint64_t>(i));
    Window manual = removal(w, replay, p.max_removal_frac);
    manual = noise_injection(std::move(manual), replay, p.max_noise_std);
    manual = shift(std::move(manual), replay, p.max_shift_frac);
    CHECK(composite.data == manual.data);
  }

  // degeneracies: with all three limits at zero effect, mix2 is the identity
  Policy inert;
  inert.kind = Kind::mix2;
  inert.max_removal_frac = 1e-9;
  inert.max_noise_std = 0.0;
  inert.max_shift_frac = 1e-9;
  Window w = random_window(meta, 2, 30);
  RngStream rng(7, 0, 0);
  CHECK(mix2(w, rng, inert).data == w.data);
}

TEST_CASE("apply_policy: none is identity, streams are per-sample deterministic") {
  RngStream meta(71, 0, 0);
  std::vector<Window> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_window(meta, 2, 32));

  Policy none;
  const auto same = apply_policy(batch, none, 3, 42);
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(same[i].data == batch[i].data);

  Policy p;
  p.kind = Kind::mix1;
  const auto once = apply_policy(batch, p, 3, 42);
  const auto twice = apply_policy(batch, p, 3, 42);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(once[i].data == twice[i].data);
    CHECK(once[i].label == batch[i].label);
    CHECK(once[i].length == batch[i].length);
    CHECK(once[i].channels == batch[i].channels);
  }

  // the same sample transforms identically regardless of batch composition
  const auto solo = transform(batch[7], p, 42, 3, 7);
  CHECK(solo.data == once[7].data);

  // distinct epochs give distinct batches
  std::set<std::vector<double>> flat;
  for (std::uint64_t epoch = 0; epoch < 10; ++epoch) {
    const auto out = apply_policy(batch, p, epoch, 42);
    std::vector<double> all;
    for (const auto& w : out) all.insert(all.end(), w.data.begin(), w.data.end());
    flat.insert(std::move(all));
  }
  CHECK(flat.size() == 10);
}

TEST_CASE("apply probability gates roughly the right fraction") {
  RngStream meta(81, 0, 0);
  Policy p;
  p.kind = Kind::shift;
  p.apply_probability = 0.5;
  int untouched = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const Window w = random_window(meta, 1, 32);
    const Window out = transform(w, p, 11, 0, static_cast<std::uint64_t>(i));
    if (out.data == w.data) ++untouched;
  }
  CHECK(untouched > 300);
  CHECK(untouched < 700);
}

TEST_CASE("per-group mode leaves excluded sensors untouched") {
  RngStream meta(91, 0, 0);
  Policy p;
  p.kind = Kind::noise;
  p.max_noise_std = 0.5;
  p.per_group_random = true;
  p.channel_groups = {{0, 1}, {2, 3}};

  int partial = 0;
  for (int i = 0; i < 200; ++i) {
    const Window w = random_window(meta, 4, 16);
    const Window out = transform(w, p, 13, 0, static_cast<std::uint64_t>(i));
    bool g0_changed = false, g1_changed = false;
    for (int c = 0; c < 2; ++c) {
      for (int t = 0; t < 16; ++t) {
        if (out.at(c, t) != w.at(c, t)) g0_changed = true;
      }
    }
    for (int c = 2; c < 4; ++c) {
      for (int t = 0; t < 16; ++t) {
        if (out.at(c, t) != w.at(c, t)) g1_changed = true;
      }
    }
    if (g0_changed != g1_changed) ++partial;
  }
  CHECK(partial > 50);  // half the time exactly one sensor block transforms
}

TEST_CASE("policy validation and the stable vocabulary") {
  for (const auto* name : {"none", "removal", "noise", "shift", "mix1", "mix2"}) {
    CHECK(to_string(kind_from_string(name)) == name);
  }
  CHECK_THROWS_AS(kind_from_string("warp"), UserError);

  Policy bad;
  bad.kind = Kind::removal;
  bad.max_removal_frac = 1.5;
  CHECK_THROWS_AS(bad.validate(), UserError);

  Policy none;
  none.max_removal_frac = -1;  // ignored for kind=none
  CHECK_NOTHROW(none.validate());
}
