#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kdts/dataio.hpp"
#include "kdts/rng.hpp"

namespace kdts::augment {

using dataio::Window;

// Stable external vocabulary: none, removal, noise, shift, mix1, mix2.
enum class Kind { none, removal, noise, shift, mix1, mix2 };

std::string to_string(Kind k);
Kind kind_from_string(const std::string& name);

struct Policy {
  Kind kind = Kind::none;
  double max_removal_frac = 0.5;  // in (0, 1]
  double max_noise_std = 0.2;     // >= 0
  double max_shift_frac = 0.5;    // in (0, 1]
  double apply_probability = 1.0; // in (0, 1]

  // Optional per-sensor mode: when per_group_random is set, each channel
  // group is independently included with probability 1/2 and excluded
  // channels pass through untouched. Used for datasets whose sensors to
  // transform are chosen at random per window.
  bool per_group_random = false;
  std::vector<std::pair<int, int>> channel_groups;  // inclusive [first, last]

  void validate() const;

  nlohmann::json to_json() const;
  static Policy from_json(const nlohmann::json& j);
};

// The five transforms. Each consumes draws from the stream in a fixed,
// documented order so that composite transforms can be replayed:
//   removal:  n, then start
//   noise:    sigma, then one gaussian per (channel, t) in channel-major order
//   shift:    k
//   mix1:     removal draws then shift draws
//   mix2:     removal, noise, then shift draws
// Shape and label are always preserved.

// Flattens a random segment to its head value. Segment position and length
// are shared across channels; the fill value is per-channel. When
// floor(max_frac * T) < 1 the window is returned unchanged and no draws are
// consumed.
Window removal(Window w, RngStream& rng, double max_frac);

// Adds Gaussian noise with one sigma ~ U[0, max_std] per window. sigma == 0
// adds nothing.
Window noise_injection(Window w, RngStream& rng, double max_std);

// Circular right roll by k ~ U{0, ..., floor(max_frac * T)}; all channels
// jointly. output[i] = input[(i - k) mod T].
Window shift(Window w, RngStream& rng, double max_frac);

Window mix1(Window w, RngStream& rng, const Policy& p);
Window mix2(Window w, RngStream& rng, const Policy& p);

// Applies the policy's transform to one window with the stream keyed by
// (seed, epoch, sample_index). The apply_probability gate draw happens only
// when apply_probability < 1, and the group-mask draws only in
// per_group_random mode, so the plain transforms are replayable against this
// entry point.
Window transform(const Window& w, const Policy& p, std::uint64_t seed, std::uint64_t epoch,
                 std::uint64_t sample_index);

// Batch form: sample index = position in the batch.
std::vector<Window> apply_policy(std::vector<Window> batch, const Policy& p,
                                 std::uint64_t epoch, std::uint64_t seed);

}  // namespace kdts::augment
