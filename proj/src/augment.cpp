#include "kdts/augment.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "kdts/error.hpp"

namespace kdts::augment {

using nlohmann::json;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::none: return "none";
    case Kind::removal: return "removal";
    case Kind::noise: return "noise";
    case Kind::shift: return "shift";
    case Kind::mix1: return "mix1";
    case Kind::mix2: return "mix2";
  }
  throw InternalError("augment: unknown kind");
}

Kind kind_from_string(const std::string& name) {
  if (name == "none") return Kind::none;
  if (name == "removal") return Kind::removal;
  if (name == "noise") return Kind::noise;
  if (name == "shift") return Kind::shift;
  if (name == "mix1") return Kind::mix1;
  if (name == "mix2") return Kind::mix2;
  throw UserError("augment: unknown policy kind '" + name +
                  "' (expected none|removal|noise|shift|mix1|mix2)");
}

void Policy::validate() const {
  if (kind == Kind::none) return;
  if (!(max_removal_frac > 0.0 && max_removal_frac <= 1.0)) {
    throw UserError("augment: max_removal_frac must be in (0, 1]");
  }
  if (!(max_noise_std >= 0.0)) throw UserError("augment: max_noise_std must be >= 0");
  if (!(max_shift_frac > 0.0 && max_shift_frac <= 1.0)) {
    throw UserError("augment: max_shift_frac must be in (0, 1]");
  }
  if (!(apply_probability > 0.0 && apply_probability <= 1.0)) {
    throw UserError("augment: apply_probability must be in (0, 1]");
  }
  for (const auto& [lo, hi] : channel_groups) {
    if (lo < 0 || hi < lo) throw UserError("augment: bad channel group range");
  }
}

json Policy::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["max_removal_frac"] = max_removal_frac;
  j["max_noise_std"] = max_noise_std;
  j["max_shift_frac"] = max_shift_frac;
  j["apply_probability"] = apply_probability;
  j["per_group_random"] = per_group_random;
  j["channel_groups"] = channel_groups;
  return j;
}

Policy Policy::from_json(const json& j) {
  Policy p;
  if (j.is_string()) {  // shorthand: "shift"
    p.kind = kind_from_string(j.get<std::string>());
    return p;
  }
  p.kind = kind_from_string(j.value("kind", "none"));
  p.max_removal_frac = j.value("max_removal_frac", p.max_removal_frac);
  p.max_noise_std = j.value("max_noise_std", p.max_noise_std);
  p.max_shift_frac = j.value("max_shift_frac", p.max_shift_frac);
  p.apply_probability = j.value("apply_probability", p.apply_probability);
  p.per_group_random = j.value("per_group_random", p.per_group_random);
  if (j.contains("channel_groups")) {
    p.channel_groups = j.at("channel_groups").get<std::vector<std::pair<int, int>>>();
  }
  p.validate();
  return p;
}

Window removal(Window w, RngStream& rng, double max_frac) {
  const int T = w.length;
  const int limit = static_cast<int>(std::floor(max_frac * T));
  if (limit < 1) return w;
  const int n = static_cast<int>(rng.next_int(1, limit));
  const int start = static_cast<int>(rng.next_int(0, T - n));
  for (int c = 0; c < w.channels; ++c) {
    const double head = w.at(c, start);
    for (int t = start; t < start + n; ++t) w.at(c, t) = head;
  }
  return w;
}

Window noise_injection(Window w, RngStream& rng, double max_std) {
  const double sigma = max_std * rng.next_unit();
  if (sigma > 0.0) {
    for (double& v : w.data) v += sigma * rng.next_gaussian();
  }
  return w;
}

Window shift(Window w, RngStream& rng, double max_frac) {
  const int T = w.length;
  const int limit = static_cast<int>(std::floor(max_frac * T));
  const int k = static_cast<int>(rng.next_int(0, limit)) % T;
  if (k == 0) return w;
  std::vector<double> rolled(w.data.size());
  for (int c = 0; c < w.channels; ++c) {
    const double* src = w.data.data() + static_cast<std::size_t>(c) * T;
    double* dst = rolled.data() + static_cast<std::size_t>(c) * T;
    // output[i] = input[(i - k) mod T]
    std::copy(src + T - k, src + T, dst);
    std::copy(src, src + T - k, dst + k);
  }
  w.data = std::move(rolled);
  return w;
}

Window mix1(Window w, RngStream& rng, const Policy& p) {
  w = removal(std::move(w), rng, p.max_removal_frac);
  return shift(std::move(w), rng, p.max_shift_frac);
}

Window mix2(Window w, RngStream& rng, const Policy& p) {
  w = removal(std::move(w), rng, p.max_removal_frac);
  w = noise_injection(std::move(w), rng, p.max_noise_std);
  return shift(std::move(w), rng, p.max_shift_frac);
}

namespace {

Window dispatch(Window w, RngStream& rng, const Policy& p) {
  switch (p.kind) {
    case Kind::none: return w;
    case Kind::removal: return removal(std::move(w), rng, p.max_removal_frac);
    case Kind::noise: return noise_injection(std::move(w), rng, p.max_noise_std);
    case Kind::shift: return shift(std::move(w), rng, p.max_shift_frac);
    case Kind::mix1: return mix1(std::move(w), rng, p);
    case Kind::mix2: return mix2(std::move(w), rng, p);
  }
  throw InternalError("augment: unknown kind");
}

}  // namespace

Window transform(const Window& w, const Policy& p, std::uint64_t seed, std::uint64_t epoch,
                 std::uint64_t sample_index) {
  if (p.kind == Kind::none) return w;
  RngStream rng(seed, epoch, sample_index);
  if (p.apply_probability < 1.0 && rng.next_unit() >= p.apply_probability) return w;

  std::vector<bool> group_kept;
  if (p.per_group_random && !p.channel_groups.empty()) {
    group_kept.resize(p.channel_groups.size());
    for (std::size_t g = 0; g < group_kept.size(); ++g) group_kept[g] = rng.next_unit() < 0.5;
  }

  Window out = dispatch(w, rng, p);

  if (!group_kept.empty()) {
    // Channels in excluded groups (and channels outside every group) keep
    // their original values; the transform draws are shared regardless.
    std::vector<bool> keep_channel(w.channels, false);
    for (std::size_t g = 0; g < p.channel_groups.size(); ++g) {
      if (!group_kept[g]) continue;
      const auto [lo, hi] = p.channel_groups[g];
      for (int c = lo; c <= hi && c < w.channels; ++c) keep_channel[c] = true;
    }
    for (int c = 0; c < w.channels; ++c) {
      if (keep_channel[c]) continue;
      for (int t = 0; t < w.length; ++t) out.at(c, t) = w.at(c, t);
    }
  }
  return out;
}

std::vector<Window> apply_policy(std::vector<Window> batch, const Policy& p, std::uint64_t epoch,
                                 std::uint64_t seed) {
  if (p.kind == Kind::none) return batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i] = transform(batch[i], p, seed, epoch, i);
  }
  return batch;
}

}  // namespace kdts::augment
