#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kdts/rng.hpp"

namespace kdts::nn {

// Dense (batch, channels, length) tensor, row-major in that order. Linear
// layers treat (channels, length) as a flat feature axis.
struct Tensor {
  int batch = 0, channels = 0, length = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int b, int c, int t)
      : batch(b), channels(c), length(t),
        v(static_cast<std::size_t>(b) * c * t, 0.0) {}

  std::size_t features() const { return static_cast<std::size_t>(channels) * length; }
  double* sample(int b) { return v.data() + static_cast<std::size_t>(b) * features(); }
  const double* sample(int b) const { return v.data() + static_cast<std::size_t>(b) * features(); }
  double& at(int b, int c, int t) {
    return v[(static_cast<std::size_t>(b) * channels + c) * length + t];
  }
  double at(int b, int c, int t) const {
    return v[(static_cast<std::size_t>(b) * channels + c) * length + t];
  }
};

struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  explicit Param(std::string n, std::size_t size)
      : name(std::move(n)), value(size, 0.0), grad(size, 0.0) {}
};

// Non-trainable state that still belongs in a checkpoint (BN running stats).
struct Buffer {
  std::string name;
  std::vector<double> value;

  explicit Buffer(std::string n, std::size_t size, double fill = 0.0)
      : name(std::move(n)), value(size, fill) {}
};

class Module {
 public:
  virtual ~Module() = default;

  // Caches whatever backward() needs. training selects batch-vs-running
  // statistics in normalization layers.
  virtual Tensor forward(const Tensor& x, bool training) = 0;

  // Consumes the cache from the last forward; accumulates parameter
  // gradients and returns the gradient w.r.t. the input.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual void visit_params(const std::function<void(Param&)>& fn) { (void)fn; }
  virtual void visit_buffers(const std::function<void(Buffer&)>& fn) { (void)fn; }
  virtual void init_weights(RngStream& rng) { (void)rng; }
};

class Conv1d : public Module {
 public:
  // Bias-free convolution; pad defaults to (kernel-1)/2 ("same" for stride 1).
  Conv1d(int in_channels, int out_channels, int kernel, int stride = 1, int pad = -1);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit_params(const std::function<void(Param&)>& fn) override { fn(weight_); }
  void init_weights(RngStream& rng) override;

  int out_length(int in_length) const;

 private:
  int in_, out_, k_, stride_, pad_;
  Param weight_;  // (out, in, k) row-major
  Tensor x_;      // cached input
  std::vector<double> col_;

  void im2col(const Tensor& x, int b, int t_out);
};

class BatchNorm1d : public Module {
 public:
  explicit BatchNorm1d(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit_params(const std::function<void(Param&)>& fn) override {
    fn(gamma_);
    fn(beta_);
  }
  void visit_buffers(const std::function<void(Buffer&)>& fn) override {
    fn(running_mean_);
    fn(running_var_);
  }
  void init_weights(RngStream& rng) override;

 private:
  int channels_;
  double eps_, momentum_;
  Param gamma_, beta_;
  Buffer running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool trained_forward_ = false;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor y_;
};

class MaxPool1d : public Module {
 public:
  MaxPool1d(int kernel, int stride, int pad);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int k_, stride_, pad_;
  int in_length_ = 0;
  std::vector<int> argmax_;
  int out_b_ = 0, out_c_ = 0, out_t_ = 0;
};

class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int in_length_ = 0;
};

class Linear : public Module {
 public:
  Linear(int in_features, int out_features);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit_params(const std::function<void(Param&)>& fn) override {
    fn(weight_);
    fn(bias_);
  }
  void init_weights(RngStream& rng) override;

 private:
  int in_, out_;
  Param weight_;  // (out, in)
  Param bias_;
  Tensor x_;
};

class Sequential : public Module {
 public:
  Sequential() = default;

  template <typename M, typename... Args>
  M* emplace(Args&&... args) {
    auto mod = std::make_unique<M>(std::forward<Args>(args)...);
    M* raw = mod.get();
    children_.push_back(std::move(mod));
    return raw;
  }
  void push(std::unique_ptr<Module> m) { children_.push_back(std::move(m)); }

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit_params(const std::function<void(Param&)>& fn) override;
  void visit_buffers(const std::function<void(Buffer&)>& fn) override;
  void init_weights(RngStream& rng) override;

 private:
  std::vector<std::unique_ptr<Module>> children_;
};

// Owns a module tree and exposes flat parameter/buffer access, weight
// (de)serialization, and finite-input checking.
class Network {
 public:
  Network() = default;
  explicit Network(std::unique_ptr<Module> root);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_logits);
  void zero_grad();

  const std::vector<Param*>& params() const { return params_; }
  const std::vector<Buffer*>& buffers() const { return buffers_; }
  long parameter_count() const;

  void init_weights(RngStream& rng);

  // Params followed by buffers, in visit order.
  std::vector<double> state() const;
  void load_state(std::span<const double> flat);
  std::uint64_t state_hash() const;

 private:
  std::unique_ptr<Module> root_;
  std::vector<Param*> params_;
  std::vector<Buffer*> buffers_;
};

// SGD with momentum: v = mu * v + g; w -= lr * v.
class Sgd {
 public:
  explicit Sgd(double momentum) : momentum_(momentum) {}
  void step(const std::vector<Param*>& params, double lr);

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace kdts::nn
