#include "kdts/models.hpp"

#include <cstring>
#include <fstream>
#include <memory>
#include <utility>

#include <nlohmann/json.hpp>

#include "kdts/error.hpp"
#include "kdts/version.hpp"

namespace kdts::models {

using nlohmann::json;
using nn::BatchNorm1d;
using nn::Conv1d;
using nn::GlobalAvgPool;
using nn::Linear;
using nn::MaxPool1d;
using nn::Module;
using nn::ReLU;
using nn::Sequential;
using nn::Tensor;

std::string to_string(Family f) {
  return f == Family::resnet18 ? "resnet18" : "wrn";
}

Family family_from_string(const std::string& name) {
  if (name == "resnet18") return Family::resnet18;
  if (name == "wrn") return Family::wrn;
  throw UserError("models: unknown family '" + name + "' (expected resnet18|wrn)");
}

void ModelSpec::validate() const {
  if (family == Family::wrn && (depth - 4) % 6 != 0) {
    throw UserError("models: wrn depth must satisfy (depth - 4) % 6 == 0, got " +
                    std::to_string(depth));
  }
  if (family == Family::wrn && depth < 10) throw UserError("models: wrn depth too small");
  if (width < 1) throw UserError("models: width must be >= 1");
  if (in_channels < 1) throw UserError("models: in_channels must be >= 1");
  if (n_classes < 2) throw UserError("models: n_classes must be >= 2");
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw UserError("models: kernel_size must be odd and >= 1");
  }
}

std::string ModelSpec::label() const {
  if (family == Family::wrn) {
    return "WRN" + std::to_string(depth) + "-" + std::to_string(width);
  }
  return "ResNet18(" + std::to_string(width) + ")";
}

json ModelSpec::to_json() const {
  return json{{"family", to_string(family)}, {"depth", depth},
              {"width", width},              {"in_channels", in_channels},
              {"n_classes", n_classes},      {"kernel_size", kernel_size}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  s.family = family_from_string(j.at("family").get<std::string>());
  s.depth = j.value("depth", s.family == Family::wrn ? 16 : 18);
  s.width = j.at("width").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  s.n_classes = j.at("n_classes").get<int>();
  s.kernel_size = j.value("kernel_size", 3);
  s.validate();
  return s;
}

namespace {

// Pre-activation residual block (WRN style):
//   y = conv2(relu(bn2(conv1(o)))) + shortcut
// where o = relu(bn1(x)). With a projection the shortcut reads the
// pre-activated o; the identity shortcut reads x directly.
class PreactBlock : public Module {
 public:
  PreactBlock(int in, int out, int stride, int kernel)
      : bn1_(in), conv1_(in, out, kernel, stride), bn2_(out), conv2_(out, out, kernel, 1) {
    if (stride != 1 || in != out) proj_ = std::make_unique<Conv1d>(in, out, 1, stride, 0);
  }

  Tensor forward(const Tensor& x, bool training) override {
    Tensor o = relu1_.forward(bn1_.forward(x, training), training);
    Tensor y = conv2_.forward(
        relu2_.forward(bn2_.forward(conv1_.forward(o, training), training), training), training);
    if (proj_) {
      const Tensor s = proj_->forward(o, training);
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
    } else {
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor d_r = conv1_.backward(bn2_.backward(relu2_.backward(conv2_.backward(grad_out))));
    if (proj_) {
      Tensor d_proj = proj_->backward(grad_out);
      for (std::size_t i = 0; i < d_r.v.size(); ++i) d_r.v[i] += d_proj.v[i];
    }
    Tensor dx = bn1_.backward(relu1_.backward(d_r));
    if (!proj_) {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += grad_out.v[i];
    }
    return dx;
  }

  void visit_params(const std::function<void(nn::Param&)>& fn) override {
    bn1_.visit_params(fn);
    conv1_.visit_params(fn);
    bn2_.visit_params(fn);
    conv2_.visit_params(fn);
    if (proj_) proj_->visit_params(fn);
  }
  void visit_buffers(const std::function<void(nn::Buffer&)>& fn) override {
    bn1_.visit_buffers(fn);
    bn2_.visit_buffers(fn);
  }
  void init_weights(RngStream& rng) override {
    bn1_.init_weights(rng);
    conv1_.init_weights(rng);
    bn2_.init_weights(rng);
    conv2_.init_weights(rng);
    if (proj_) proj_->init_weights(rng);
  }

 private:
  BatchNorm1d bn1_;
  ReLU relu1_;
  Conv1d conv1_;
  BatchNorm1d bn2_;
  ReLU relu2_;
  Conv1d conv2_;
  std::unique_ptr<Conv1d> proj_;
};

// Post-activation basic block (classic ResNet):
//   y = relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))
// shortcut is identity, or conv1 + BN when shape changes.
class BasicBlock : public Module {
 public:
  BasicBlock(int in, int out, int stride, int kernel)
      : conv1_(in, out, kernel, stride), bn1_(out), conv2_(out, out, kernel, 1), bn2_(out) {
    if (stride != 1 || in != out) {
      proj_ = std::make_unique<Conv1d>(in, out, 1, stride, 0);
      proj_bn_ = std::make_unique<BatchNorm1d>(out);
    }
  }

  Tensor forward(const Tensor& x, bool training) override {
    Tensor h = bn2_.forward(
        conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x, training), training),
                                      training),
                       training),
        training);
    if (proj_) {
      Tensor s = proj_bn_->forward(proj_->forward(x, training), training);
      for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += s.v[i];
    } else {
      for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += x.v[i];
    }
    return relu_out_.forward(h, training);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor d_sum = relu_out_.backward(grad_out);
    Tensor dx = conv1_.backward(
        bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d_sum)))));
    if (proj_) {
      Tensor d_short = proj_->backward(proj_bn_->backward(d_sum));
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d_short.v[i];
    } else {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d_sum.v[i];
    }
    return dx;
  }

  void visit_params(const std::function<void(nn::Param&)>& fn) override {
    conv1_.visit_params(fn);
    bn1_.visit_params(fn);
    conv2_.visit_params(fn);
    bn2_.visit_params(fn);
    if (proj_) {
      proj_->visit_params(fn);
      proj_bn_->visit_params(fn);
    }
  }
  void visit_buffers(const std::function<void(nn::Buffer&)>& fn) override {
    bn1_.visit_buffers(fn);
    bn2_.visit_buffers(fn);
    if (proj_bn_) proj_bn_->visit_buffers(fn);
  }
  void init_weights(RngStream& rng) override {
    conv1_.init_weights(rng);
    bn1_.init_weights(rng);
    conv2_.init_weights(rng);
    bn2_.init_weights(rng);
    if (proj_) {
      proj_->init_weights(rng);
      proj_bn_->init_weights(rng);
    }
  }

 private:
  Conv1d conv1_;
  BatchNorm1d bn1_;
  ReLU relu1_;
  Conv1d conv2_;
  BatchNorm1d bn2_;
  ReLU relu_out_;
  std::unique_ptr<Conv1d> proj_;
  std::unique_ptr<BatchNorm1d> proj_bn_;
};

nn::Network build_wrn(const ModelSpec& s) {
  const int n = (s.depth - 4) / 6;  // blocks per group
  const int widths[3] = {16 * s.width, 32 * s.width, 64 * s.width};

  auto net = std::make_unique<Sequential>();
  net->emplace<Conv1d>(s.in_channels, 16, s.kernel_size, 1);
  int in = 16;
  for (int g = 0; g < 3; ++g) {
    const int out = widths[g];
    for (int b = 0; b < n; ++b) {
      const int stride = (b == 0 && g > 0) ? 2 : 1;
      net->emplace<PreactBlock>(in, out, stride, s.kernel_size);
      in = out;
    }
  }
  net->emplace<BatchNorm1d>(in);
  net->emplace<ReLU>();
  net->emplace<GlobalAvgPool>();
  net->emplace<Linear>(in, s.n_classes);
  return nn::Network(std::move(net));
}

nn::Network build_resnet18(const ModelSpec& s) {
  const int k = s.width;
  auto net = std::make_unique<Sequential>();
  net->emplace<Conv1d>(s.in_channels, k, 7, 2, 3);
  net->emplace<BatchNorm1d>(k);
  net->emplace<ReLU>();
  net->emplace<MaxPool1d>(3, 2, 1);
  int in = k;
  const int stage_width[4] = {k, 2 * k, 4 * k, 8 * k};
  for (int stage = 0; stage < 4; ++stage) {
    const int out = stage_width[stage];
    for (int b = 0; b < 2; ++b) {
      const int stride = (b == 0 && stage > 0) ? 2 : 1;
      net->emplace<BasicBlock>(in, out, stride, s.kernel_size);
      in = out;
    }
  }
  net->emplace<GlobalAvgPool>();
  net->emplace<Linear>(in, s.n_classes);
  return nn::Network(std::move(net));
}

}  // namespace

nn::Network build(const ModelSpec& spec) {
  spec.validate();
  return spec.family == Family::wrn ? build_wrn(spec) : build_resnet18(spec);
}

long count_parameters(const nn::Network& net) { return net.parameter_count(); }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'K', 'D', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const std::filesystem::path& file, const nn::Network& net,
                     const CheckpointMeta& meta) {
  const auto flat = net.state();

  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["spec"] = meta.spec.to_json();
  header["epoch"] = meta.epoch;
  header["metrics"] = {{"train_loss", meta.train_loss}, {"test_accuracy", meta.test_accuracy}};
  header["config_hash"] = meta.config_hash;
  header["n_values"] = flat.size();
  const std::string header_str = header.dump();

  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("checkpoint: cannot write " + file.string());
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), header_str.size());
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw UserError("checkpoint: cannot open " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw UserError("checkpoint: bad magic in " + file.string());
  }
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), hlen);
  if (!in) throw UserError("checkpoint: truncated header in " + file.string());
  const json header = json::parse(header_str);
  if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw UserError("checkpoint: unsupported format version in " + file.string());
  }

  LoadedCheckpoint loaded;
  loaded.meta.spec = ModelSpec::from_json(header.at("spec"));
  loaded.meta.epoch = header.at("epoch").get<int>();
  loaded.meta.train_loss = header.at("metrics").at("train_loss").get<double>();
  loaded.meta.test_accuracy = header.at("metrics").at("test_accuracy").get<double>();
  loaded.meta.config_hash = header.at("config_hash").get<std::string>();
  loaded.meta.format_version = header.at("format_version").get<int>();

  const auto n_values = header.at("n_values").get<std::size_t>();
  std::vector<double> flat(n_values);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(n_values * sizeof(double)));
  if (!in) throw UserError("checkpoint: truncated weight blob in " + file.string());

  loaded.net = build(loaded.meta.spec);
  loaded.net.load_state(flat);
  return loaded;
}

}  // namespace kdts::models
