#include "kdts/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Dense>

#include "kdts/error.hpp"

namespace kdts::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowConst = Eigen::Map<const RowMat>;
using MapCol = Eigen::Map<Eigen::MatrixXd>;

}  // namespace

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

Conv1d::Conv1d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride),
      pad_(pad >= 0 ? pad : (kernel - 1) / 2),
      weight_("w", static_cast<std::size_t>(out_channels) * in_channels * kernel) {}

int Conv1d::out_length(int in_length) const {
  return (in_length + 2 * pad_ - k_) / stride_ + 1;
}

void Conv1d::im2col(const Tensor& x, int b, int t_out) {
  // col is (in*k) x t_out, column-major.
  col_.assign(static_cast<std::size_t>(in_) * k_ * t_out, 0.0);
  for (int ot = 0; ot < t_out; ++ot) {
    const int t0 = ot * stride_ - pad_;
    double* col_col = col_.data() + static_cast<std::size_t>(ot) * in_ * k_;
    for (int ci = 0; ci < in_; ++ci) {
      const double* src = x.v.data() + (static_cast<std::size_t>(b) * in_ + ci) * x.length;
      for (int kk = 0; kk < k_; ++kk) {
        const int t = t0 + kk;
        if (t >= 0 && t < x.length) col_col[ci * k_ + kk] = src[t];
      }
    }
  }
}

Tensor Conv1d::forward(const Tensor& x, bool) {
  if (x.channels != in_) throw InternalError("conv1d: channel mismatch");
  const int t_out = out_length(x.length);
  if (t_out < 1) throw InternalError("conv1d: input too short for this stride/kernel");
  x_ = x;

  Tensor y(x.batch, out_, t_out);
  MapRowConst W(weight_.value.data(), out_, in_ * k_);
  for (int b = 0; b < x.batch; ++b) {
    im2col(x, b, t_out);
    MapCol col(col_.data(), in_ * k_, t_out);
    MapRow Y(y.v.data() + static_cast<std::size_t>(b) * out_ * t_out, out_, t_out);
    Y.noalias() = W * col;
  }
  return y;
}

Tensor Conv1d::backward(const Tensor& grad_out) {
  const int t_out = grad_out.length;
  Tensor dx(x_.batch, in_, x_.length);
  MapRowConst W(weight_.value.data(), out_, in_ * k_);
  MapRow dW(weight_.grad.data(), out_, in_ * k_);
  std::vector<double> dcol(static_cast<std::size_t>(in_) * k_ * t_out);

  for (int b = 0; b < x_.batch; ++b) {
    MapRowConst dY(grad_out.v.data() + static_cast<std::size_t>(b) * out_ * t_out, out_, t_out);
    im2col(x_, b, t_out);
    MapCol col(col_.data(), in_ * k_, t_out);
    dW.noalias() += dY * col.transpose();

    MapCol dcol_m(dcol.data(), in_ * k_, t_out);
    dcol_m.noalias() = W.transpose() * dY;

    // col2im: scatter-add the column gradients back onto the input.
    for (int ot = 0; ot < t_out; ++ot) {
      const int t0 = ot * stride_ - pad_;
      const double* src = dcol.data() + static_cast<std::size_t>(ot) * in_ * k_;
      for (int ci = 0; ci < in_; ++ci) {
        double* dst = dx.v.data() + (static_cast<std::size_t>(b) * in_ + ci) * x_.length;
        for (int kk = 0; kk < k_; ++kk) {
          const int t = t0 + kk;
          if (t >= 0 && t < x_.length) dst[t] += src[ci * k_ + kk];
        }
      }
    }
  }
  return dx;
}

void Conv1d::init_weights(RngStream& rng) {
  const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_) * k_));
  for (double& w : weight_.value) w = std_dev * rng.next_gaussian();
  std::fill(weight_.grad.begin(), weight_.grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// BatchNorm1d — statistics per channel over (batch, time).
// ---------------------------------------------------------------------------

BatchNorm1d::BatchNorm1d(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum),
      gamma_("gamma", channels), beta_("beta", channels),
      running_mean_("running_mean", channels, 0.0),
      running_var_("running_var", channels, 1.0) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
}

void BatchNorm1d::init_weights(RngStream&) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  std::fill(beta_.value.begin(), beta_.value.end(), 0.0);
  std::fill(running_mean_.value.begin(), running_mean_.value.end(), 0.0);
  std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) {
  if (x.channels != channels_) throw InternalError("batchnorm: channel mismatch");
  const int B = x.batch, T = x.length;
  const long N = static_cast<long>(B) * T;
  Tensor y(B, channels_, T);
  trained_forward_ = training;

  if (training) {
    xhat_ = Tensor(B, channels_, T);
    inv_std_.assign(channels_, 0.0);
    for (int c = 0; c < channels_; ++c) {
      double sum = 0.0, sum_sq = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* p = x.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        for (int t = 0; t < T; ++t) {
          sum += p[t];
          sum_sq += p[t] * p[t];
        }
      }
      const double mean = sum / N;
      const double var = std::max(0.0, sum_sq / N - mean * mean);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[c] = inv;

      const double g = gamma_.value[c], bt = beta_.value[c];
      for (int b = 0; b < B; ++b) {
        const double* p = x.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        double* ph = xhat_.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        double* py = y.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        for (int t = 0; t < T; ++t) {
          ph[t] = (p[t] - mean) * inv;
          py[t] = g * ph[t] + bt;
        }
      }

      running_mean_.value[c] = (1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean;
      const double unbiased = N > 1 ? var * static_cast<double>(N) / (N - 1) : var;
      running_var_.value[c] = (1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    }
  } else {
    inv_std_.assign(channels_, 0.0);
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(running_var_.value[c] + eps_);
      inv_std_[c] = inv;
      const double g = gamma_.value[c], bt = beta_.value[c], m = running_mean_.value[c];
      for (int b = 0; b < B; ++b) {
        const double* p = x.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        double* py = y.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        for (int t = 0; t < T; ++t) py[t] = g * (p[t] - m) * inv + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm1d::backward(const Tensor& grad_out) {
  const int B = grad_out.batch, T = grad_out.length;
  Tensor dx(B, channels_, T);

  if (!trained_forward_) {
    for (int c = 0; c < channels_; ++c) {
      const double scale = gamma_.value[c] * inv_std_[c];
      for (int b = 0; b < B; ++b) {
        const double* pdy = grad_out.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        double* pdx = dx.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
        for (int t = 0; t < T; ++t) pdx[t] = pdy[t] * scale;
      }
    }
    return dx;
  }

  const double N = static_cast<double>(B) * T;
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < B; ++b) {
      const double* pdy = grad_out.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
      const double* ph = xhat_.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
      for (int t = 0; t < T; ++t) {
        sum_dy += pdy[t];
        sum_dy_xhat += pdy[t] * ph[t];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;

    const double scale = gamma_.value[c] * inv_std_[c] / N;
    for (int b = 0; b < B; ++b) {
      const double* pdy = grad_out.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
      const double* ph = xhat_.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
      double* pdx = dx.v.data() + (static_cast<std::size_t>(b) * channels_ + c) * T;
      for (int t = 0; t < T; ++t) {
        pdx[t] = scale * (N * pdy[t] - sum_dy - ph[t] * sum_dy_xhat);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU / pooling / linear
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool) {
  y_ = x;
  for (double& v : y_.v) v = v > 0.0 ? v : 0.0;
  return y_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.v.size(); ++i) {
    if (y_.v[i] <= 0.0) dx.v[i] = 0.0;
  }
  return dx;
}

MaxPool1d::MaxPool1d(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {}

Tensor MaxPool1d::forward(const Tensor& x, bool) {
  const int t_out = (x.length + 2 * pad_ - k_) / stride_ + 1;
  if (t_out < 1) throw InternalError("maxpool: input too short");
  in_length_ = x.length;
  out_b_ = x.batch;
  out_c_ = x.channels;
  out_t_ = t_out;
  Tensor y(x.batch, x.channels, t_out);
  argmax_.assign(y.v.size(), -1);

  std::size_t o = 0;
  for (int b = 0; b < x.batch; ++b) {
    for (int c = 0; c < x.channels; ++c) {
      const double* src = x.v.data() + (static_cast<std::size_t>(b) * x.channels + c) * x.length;
      for (int ot = 0; ot < t_out; ++ot, ++o) {
        const int t0 = ot * stride_ - pad_;
        double best = -std::numeric_limits<double>::infinity();
        int best_t = -1;
        for (int kk = 0; kk < k_; ++kk) {
          const int t = t0 + kk;
          if (t < 0 || t >= x.length) continue;
          if (src[t] > best) {  // ties keep the earliest index
            best = src[t];
            best_t = t;
          }
        }
        y.v[o] = best;
        argmax_[o] = best_t;
      }
    }
  }
  return y;
}

Tensor MaxPool1d::backward(const Tensor& grad_out) {
  Tensor dx(out_b_, out_c_, in_length_);
  std::size_t o = 0;
  for (int b = 0; b < out_b_; ++b) {
    for (int c = 0; c < out_c_; ++c) {
      double* dst = dx.v.data() + (static_cast<std::size_t>(b) * out_c_ + c) * in_length_;
      for (int ot = 0; ot < out_t_; ++ot, ++o) {
        if (argmax_[o] >= 0) dst[argmax_[o]] += grad_out.v[o];
      }
    }
  }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_length_ = x.length;
  Tensor y(x.batch, x.channels, 1);
  std::size_t o = 0;
  for (int b = 0; b < x.batch; ++b) {
    for (int c = 0; c < x.channels; ++c, ++o) {
      const double* src = x.v.data() + (static_cast<std::size_t>(b) * x.channels + c) * x.length;
      double sum = 0.0;
      for (int t = 0; t < x.length; ++t) sum += src[t];
      y.v[o] = sum / x.length;
    }
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.batch, grad_out.channels, in_length_);
  std::size_t o = 0;
  const double inv = 1.0 / in_length_;
  for (int b = 0; b < grad_out.batch; ++b) {
    for (int c = 0; c < grad_out.channels; ++c, ++o) {
      double* dst = dx.v.data() + (static_cast<std::size_t>(b) * grad_out.channels + c) * in_length_;
      const double g = grad_out.v[o] * inv;
      for (int t = 0; t < in_length_; ++t) dst[t] = g;
    }
  }
  return dx;
}

Linear::Linear(int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_("w", static_cast<std::size_t>(out_features) * in_features),
      bias_("b", out_features) {}

Tensor Linear::forward(const Tensor& x, bool) {
  if (static_cast<int>(x.features()) != in_) throw InternalError("linear: feature mismatch");
  x_ = x;
  Tensor y(x.batch, out_, 1);
  MapRowConst X(x.v.data(), x.batch, in_);
  MapRowConst W(weight_.value.data(), out_, in_);
  MapRow Y(y.v.data(), x.batch, out_);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias_.value.data(), out_);
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  Tensor dx(x_.batch, x_.channels, x_.length);
  MapRowConst dY(grad_out.v.data(), grad_out.batch, out_);
  MapRowConst X(x_.v.data(), x_.batch, in_);
  MapRowConst W(weight_.value.data(), out_, in_);
  MapRow dW(weight_.grad.data(), out_, in_);
  dW.noalias() += dY.transpose() * X;
  Eigen::Map<Eigen::RowVectorXd>(bias_.grad.data(), out_) += dY.colwise().sum();
  MapRow dX(dx.v.data(), x_.batch, in_);
  dX.noalias() = dY * W;
  return dx;
}

void Linear::init_weights(RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  for (double& w : weight_.value) w = bound * (2.0 * rng.next_unit() - 1.0);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Sequential / Network / Sgd
// ---------------------------------------------------------------------------

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor h = x;
  for (auto& child : children_) h = child->forward(h, training);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::visit_params(const std::function<void(Param&)>& fn) {
  for (auto& child : children_) child->visit_params(fn);
}

void Sequential::visit_buffers(const std::function<void(Buffer&)>& fn) {
  for (auto& child : children_) child->visit_buffers(fn);
}

void Sequential::init_weights(RngStream& rng) {
  for (auto& child : children_) child->init_weights(rng);
}

Network::Network(std::unique_ptr<Module> root) : root_(std::move(root)) {
  root_->visit_params([this](Param& p) { params_.push_back(&p); });
  root_->visit_buffers([this](Buffer& b) { buffers_.push_back(&b); });
}

Tensor Network::forward(const Tensor& x, bool training) {
  for (double v : x.v) {
    if (!std::isfinite(v)) throw InternalError("network: non-finite input");
  }
  return root_->forward(x, training);
}

Tensor Network::backward(const Tensor& grad_logits) { return root_->backward(grad_logits); }

void Network::zero_grad() {
  for (Param* p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

long Network::parameter_count() const {
  long n = 0;
  for (const Param* p : params_) n += static_cast<long>(p->value.size());
  return n;
}

void Network::init_weights(RngStream& rng) { root_->init_weights(rng); }

std::vector<double> Network::state() const {
  std::vector<double> flat;
  for (const Param* p : params_) flat.insert(flat.end(), p->value.begin(), p->value.end());
  for (const Buffer* b : buffers_) flat.insert(flat.end(), b->value.begin(), b->value.end());
  return flat;
}

void Network::load_state(std::span<const double> flat) {
  std::size_t off = 0;
  auto take = [&](std::vector<double>& dst) {
    if (off + dst.size() > flat.size()) throw InternalError("network: state blob too short");
    std::copy(flat.begin() + off, flat.begin() + off + dst.size(), dst.begin());
    off += dst.size();
  };
  for (Param* p : params_) take(p->value);
  for (Buffer* b : buffers_) take(b->value);
  if (off != flat.size()) throw InternalError("network: state blob size mismatch");
}

std::uint64_t Network::state_hash() const {
  const auto flat = state();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(flat.data());
  for (std::size_t i = 0; i < flat.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

void Sgd::step(const std::vector<Param*>& params, double lr) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const Param* p : params) velocity_.emplace_back(p->value.size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = velocity_[i];
    auto& w = params[i]->value;
    const auto& g = params[i]->grad;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

}  // namespace kdts::nn
