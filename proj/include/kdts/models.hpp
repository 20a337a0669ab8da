#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "kdts/nn.hpp"

namespace kdts::models {

enum class Family { resnet18, wrn };

std::string to_string(Family f);
Family family_from_string(const std::string& name);

// Parameter count is a pure function of the spec.
struct ModelSpec {
  Family family = Family::wrn;
  int depth = 16;       // wrn: (depth - 4) % 6 == 0; ignored for resnet18
  int width = 1;        // wrn widening factor k, or resnet18 first-layer width
  int in_channels = 3;
  int n_classes = 14;
  int kernel_size = 3;  // temporal kernel of the residual convolutions; odd

  void validate() const;
  std::string label() const;  // e.g. "WRN16-1", "ResNet18(8)"

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  bool operator==(const ModelSpec&) const = default;
};

// Builds the 1-D classifier: (batch, in_channels, T) -> (batch, n_classes)
// logits.
//
// WRN-d-k: kernel-3 stem to 16 channels, three groups of pre-activation
// blocks at widths 16k/32k/64k with temporal stride 2 between groups,
// bias-free convolutions, projection shortcuts where shape changes, final
// BN+ReLU, global average pooling, linear head.
//
// ResNet18(k): kernel-7 stride-2 stem to k channels with BN+ReLU and
// max-pooling, four stages of two post-activation basic blocks at widths
// k/2k/4k/8k, downsample shortcuts with BN, global average pooling, linear
// head.
nn::Network build(const ModelSpec& spec);

long count_parameters(const nn::Network& net);

// ---------------------------------------------------------------------------
// Checkpoint container: JSON header (spec, epoch, metrics, config hash,
// format version) followed by the raw little-endian weight blob. Round-trips
// bit-exactly.
// ---------------------------------------------------------------------------
struct CheckpointMeta {
  ModelSpec spec;
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::string config_hash;
  int format_version = 0;
};

void save_checkpoint(const std::filesystem::path& file, const nn::Network& net,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  nn::Network net;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace kdts::models
