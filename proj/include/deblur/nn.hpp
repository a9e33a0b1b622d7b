#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

namespace deblur::nn {

enum class LayerKind {
  conv2d,
  conv_transpose2d,
  instance_norm,
  relu,
  leaky_relu,
  tanh,
  residual_block,
  flatten_mean,
};

inline constexpr LayerKind kAllLayerKinds[] = {
    LayerKind::conv2d, LayerKind::conv_transpose2d, LayerKind::instance_norm,
    LayerKind::relu,   LayerKind::leaky_relu,       LayerKind::tanh,
    LayerKind::residual_block, LayerKind::flatten_mean,
};

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::instance_norm: return "instance_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::residual_block: return "residual_block";
    case LayerKind::flatten_mean: return "flatten_mean";
  }
  return "?";
}

inline LayerKind kind_from_name(const std::string& name) {
  for (LayerKind k : kAllLayerKinds)
    if (name == kind_name(k)) return k;
  throw FormatError("unknown layer kind '" + name + "'");
}

enum class ParamRole { weight, bias, scale, shift };

template <typename T>
struct Param {
  ParamRole role = ParamRole::weight;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(ParamRole r, std::size_t n, T init = T{0}) : role(r), value(n, init), grad(n, T{0}) {}
  std::size_t size() const noexcept { return value.size(); }
};

/// Hyperparameters as ordered key/value pairs (checkpoint header order).
using Hyper = std::vector<std::pair<std::string, double>>;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  /// Caches whatever backward needs.
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  /// Returns dL/dx and accumulates parameter gradients.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual Hyper hyper() const { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<const Param<T>*> params() const {
    auto ps = const_cast<Layer*>(this)->params();
    return {ps.begin(), ps.end()};
  }
};

namespace detail {

/// Output positions o in [lo, hi) whose input tap o*stride + k - pad lands in [0, in).
inline std::pair<int, int> tap_range(int out, int in, int stride, int pad, int k) noexcept {
  const int lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const int last = in - 1 - k + pad;
  int hi = last >= 0 ? last / stride + 1 : 0;
  hi = std::min(hi, out);
  return {std::min(lo, hi), hi};
}

template <typename T>
void require_backward_ready(const Tensor<T>& cached, const Shape& expected_out, const Tensor<T>& grad,
                            const char* who) {
  if (cached.empty()) throw DimensionError(std::string(who) + ": backward called before forward");
  if (grad.shape() != expected_out)
    throw DimensionError(std::string(who) + ": gradient shape " + grad.shape().str() +
                         " does not match output " + expected_out.str());
}

}  // namespace detail

/// Zero-padded strided 2-D cross-correlation. Weight layout [out][in][k][k].
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride = 1, int padding = 0)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
        weight_(ParamRole::weight, static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
        bias_(ParamRole::bias, static_cast<std::size_t>(out_channels)) {
    if (in_ < 1 || out_ < 1 || k_ < 1 || stride_ < 1 || pad_ < 0)
      throw ConfigError("conv2d: invalid hyperparameters");
  }

  LayerKind kind() const override { return LayerKind::conv2d; }

  Shape output_shape(const Shape& s) const override {
    if (s.channels != in_)
      throw DimensionError("conv2d: expected " + std::to_string(in_) + " channels, got " + s.str());
    const int h = (s.height + 2 * pad_ - k_) / stride_ + 1;
    const int w = (s.width + 2 * pad_ - k_) / stride_ + 1;
    if (s.height + 2 * pad_ < k_ || s.width + 2 * pad_ < k_)
      throw DimensionError("conv2d: input " + s.str() + " smaller than kernel");
    return {s.batch, out_, h, w};
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y(output_shape(x.shape()));
    input_ = x;
    const int H = x.height(), W = x.width(), OH = y.height(), OW = y.width();
    for (int b = 0; b < x.batch(); ++b) {
      for (int o = 0; o < out_; ++o) {
        auto dst = y.plane(b, o);
        std::fill(dst.begin(), dst.end(), bias_.value[o]);
        for (int i = 0; i < in_; ++i) {
          auto src = x.plane(b, i);
          for (int ky = 0; ky < k_; ++ky) {
            const auto [y_lo, y_hi] = detail::tap_range(OH, H, stride_, pad_, ky);
            for (int kx = 0; kx < k_; ++kx) {
              const T w = weight_.value[widx(o, i, ky, kx)];
              const auto [x_lo, x_hi] = detail::tap_range(OW, W, stride_, pad_, kx);
              for (int oy = y_lo; oy < y_hi; ++oy) {
                T* drow = dst.data() + static_cast<std::size_t>(oy) * OW;
                const T* srow = src.data() + static_cast<std::size_t>(oy * stride_ + ky - pad_) * W;
                for (int ox = x_lo; ox < x_hi; ++ox) drow[ox] += w * srow[ox * stride_ + kx - pad_];
              }
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    detail::require_backward_ready(input_, output_shape(input_.shape()), g, "conv2d");
    const Tensor<T>& x = input_;
    Tensor<T> dx(x.shape());
    const int H = x.height(), W = x.width(), OH = g.height(), OW = g.width();
    for (int b = 0; b < x.batch(); ++b) {
      for (int o = 0; o < out_; ++o) {
        auto gp = g.plane(b, o);
        T gsum = 0;
        for (T v : gp) gsum += v;
        bias_.grad[o] += gsum;
        for (int i = 0; i < in_; ++i) {
          auto src = x.plane(b, i);
          auto dsrc = dx.plane(b, i);
          for (int ky = 0; ky < k_; ++ky) {
            const auto [y_lo, y_hi] = detail::tap_range(OH, H, stride_, pad_, ky);
            for (int kx = 0; kx < k_; ++kx) {
              const std::size_t wi = widx(o, i, ky, kx);
              const T w = weight_.value[wi];
              const auto [x_lo, x_hi] = detail::tap_range(OW, W, stride_, pad_, kx);
              T gw = 0;
              for (int oy = y_lo; oy < y_hi; ++oy) {
                const T* grow = gp.data() + static_cast<std::size_t>(oy) * OW;
                const std::size_t row = static_cast<std::size_t>(oy * stride_ + ky - pad_) * W;
                const T* srow = src.data() + row;
                T* drow = dsrc.data() + row;
                for (int ox = x_lo; ox < x_hi; ++ox) {
                  const int ix = ox * stride_ + kx - pad_;
                  gw += grow[ox] * srow[ix];
                  drow[ix] += w * grow[ox];
                }
              }
              weight_.grad[wi] += gw;
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  Hyper hyper() const override {
    return {{"in", in_}, {"out", out_}, {"kernel", k_}, {"stride", stride_}, {"padding", pad_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

 private:
  std::size_t widx(int o, int i, int ky, int kx) const noexcept {
    return ((static_cast<std::size_t>(o) * in_ + i) * k_ + ky) * k_ + kx;
  }

  int in_, out_, k_, stride_, pad_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

/// Transposed convolution (adjoint of Conv2d's input map). Weight layout
/// [in][out][k][k]; output size (H-1)*stride - 2*padding + kernel + output_padding.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride = 1, int padding = 0,
                  int output_padding = 0)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
        out_pad_(output_padding),
        weight_(ParamRole::weight, static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel),
        bias_(ParamRole::bias, static_cast<std::size_t>(out_channels)) {
    if (in_ < 1 || out_ < 1 || k_ < 1 || stride_ < 1 || pad_ < 0 || out_pad_ < 0 || out_pad_ >= stride_)
      throw ConfigError("conv_transpose2d: invalid hyperparameters");
  }

  LayerKind kind() const override { return LayerKind::conv_transpose2d; }

  Shape output_shape(const Shape& s) const override {
    if (s.channels != in_)
      throw DimensionError("conv_transpose2d: expected " + std::to_string(in_) + " channels, got " + s.str());
    const int h = (s.height - 1) * stride_ - 2 * pad_ + k_ + out_pad_;
    const int w = (s.width - 1) * stride_ - 2 * pad_ + k_ + out_pad_;
    if (h < 1 || w < 1) throw DimensionError("conv_transpose2d: empty output for " + s.str());
    return {s.batch, out_, h, w};
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y(output_shape(x.shape()));
    input_ = x;
    const int H = x.height(), W = x.width(), OH = y.height(), OW = y.width();
    for (int b = 0; b < x.batch(); ++b) {
      for (int o = 0; o < out_; ++o) {
        auto dst = y.plane(b, o);
        std::fill(dst.begin(), dst.end(), bias_.value[o]);
        for (int i = 0; i < in_; ++i) {
          auto src = x.plane(b, i);
          for (int ky = 0; ky < k_; ++ky) {
            // input row iy scatters to output row iy*stride + ky - pad
            const auto [y_lo, y_hi] = detail::tap_range(H, OH, stride_, pad_, ky);
            for (int kx = 0; kx < k_; ++kx) {
              const T w = weight_.value[widx(i, o, ky, kx)];
              const auto [x_lo, x_hi] = detail::tap_range(W, OW, stride_, pad_, kx);
              for (int iy = y_lo; iy < y_hi; ++iy) {
                const T* srow = src.data() + static_cast<std::size_t>(iy) * W;
                T* drow = dst.data() + static_cast<std::size_t>(iy * stride_ + ky - pad_) * OW;
                for (int ix = x_lo; ix < x_hi; ++ix) drow[ix * stride_ + kx - pad_] += w * srow[ix];
              }
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    detail::require_backward_ready(input_, output_shape(input_.shape()), g, "conv_transpose2d");
    const Tensor<T>& x = input_;
    Tensor<T> dx(x.shape());
    const int H = x.height(), W = x.width(), OH = g.height(), OW = g.width();
    for (int b = 0; b < x.batch(); ++b) {
      for (int o = 0; o < out_; ++o) {
        auto gp = g.plane(b, o);
        T gsum = 0;
        for (T v : gp) gsum += v;
        bias_.grad[o] += gsum;
        for (int i = 0; i < in_; ++i) {
          auto src = x.plane(b, i);
          auto dsrc = dx.plane(b, i);
          for (int ky = 0; ky < k_; ++ky) {
            const auto [y_lo, y_hi] = detail::tap_range(H, OH, stride_, pad_, ky);
            for (int kx = 0; kx < k_; ++kx) {
              const std::size_t wi = widx(i, o, ky, kx);
              const T w = weight_.value[wi];
              const auto [x_lo, x_hi] = detail::tap_range(W, OW, stride_, pad_, kx);
              T gw = 0;
              for (int iy = y_lo; iy < y_hi; ++iy) {
                const std::size_t row = static_cast<std::size_t>(iy) * W;
                const T* srow = src.data() + row;
                T* drow = dsrc.data() + row;
                const T* grow = gp.data() + static_cast<std::size_t>(iy * stride_ + ky - pad_) * OW;
                for (int ix = x_lo; ix < x_hi; ++ix) {
                  const T gv = grow[ix * stride_ + kx - pad_];
                  gw += gv * srow[ix];
                  drow[ix] += w * gv;
                }
              }
              weight_.grad[wi] += gw;
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  Hyper hyper() const override {
    return {{"in", in_},         {"out", out_},     {"kernel", k_},
            {"stride", stride_}, {"padding", pad_}, {"output_padding", out_pad_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

 private:
  std::size_t widx(int i, int o, int ky, int kx) const noexcept {
    return ((static_cast<std::size_t>(i) * out_ + o) * k_ + ky) * k_ + kx;
  }

  int in_, out_, k_, stride_, pad_, out_pad_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

/// Per-instance, per-channel normalization over H*W with affine scale/shift.
template <typename T>
class InstanceNorm final : public Layer<T> {
 public:
  explicit InstanceNorm(int channels, double eps = 1e-5)
      : channels_(channels), eps_(eps), scale_(ParamRole::scale, channels, T{1}),
        shift_(ParamRole::shift, channels, T{0}) {
    if (channels < 1 || !(eps > 0.0)) throw ConfigError("instance_norm: invalid hyperparameters");
  }

  LayerKind kind() const override { return LayerKind::instance_norm; }

  Shape output_shape(const Shape& s) const override {
    if (s.channels != channels_)
      throw DimensionError("instance_norm: expected " + std::to_string(channels_) + " channels, got " + s.str());
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    output_shape(x.shape());
    const std::size_t n = x.shape().plane();
    normalized_ = Tensor<T>(x.shape());
    inv_std_.assign(static_cast<std::size_t>(x.batch()) * channels_, T{0});
    Tensor<T> y(x.shape());
    for (int b = 0; b < x.batch(); ++b) {
      for (int c = 0; c < channels_; ++c) {
        auto src = x.plane(b, c);
        double mean = 0.0;
        for (T v : src) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (T v : src) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[static_cast<std::size_t>(b) * channels_ + c] = static_cast<T>(inv);
        auto xn = normalized_.plane(b, c);
        auto dst = y.plane(b, c);
        for (std::size_t j = 0; j < n; ++j) {
          xn[j] = static_cast<T>((src[j] - mean) * inv);
          dst[j] = scale_.value[c] * xn[j] + shift_.value[c];
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    detail::require_backward_ready(normalized_, normalized_.shape(), g, "instance_norm");
    const std::size_t n = g.shape().plane();
    Tensor<T> dx(g.shape());
    for (int b = 0; b < g.batch(); ++b) {
      for (int c = 0; c < channels_; ++c) {
        auto gp = g.plane(b, c);
        auto xn = normalized_.plane(b, c);
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          sum_g += gp[j];
          sum_gx += static_cast<double>(gp[j]) * xn[j];
        }
        scale_.grad[c] += static_cast<T>(sum_gx);
        shift_.grad[c] += static_cast<T>(sum_g);
        const double gamma = scale_.value[c];
        const double inv = inv_std_[static_cast<std::size_t>(b) * channels_ + c];
        const double nn = static_cast<double>(n);
        auto d = dx.plane(b, c);
        for (std::size_t j = 0; j < n; ++j)
          d[j] = static_cast<T>(gamma * inv / nn * (nn * gp[j] - sum_g - xn[j] * sum_gx));
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&scale_, &shift_}; }
  Hyper hyper() const override { return {{"channels", channels_}, {"eps", eps_}}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<InstanceNorm>(*this); }

 private:
  int channels_;
  double eps_;
  Param<T> scale_, shift_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

/// Shared machinery for parameter-free elementwise activations.
template <typename T, LayerKind Kind>
class Elementwise : public Layer<T> {
 public:
  LayerKind kind() const override { return Kind; }
  Shape output_shape(const Shape& s) const override { return s; }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = apply(x[i]);
    if constexpr (Kind == LayerKind::tanh) output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    detail::require_backward_ready(input_, input_.shape(), g, kind_name(Kind));
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * derivative(i);
    return dx;
  }

 protected:
  virtual T apply(T v) const = 0;
  virtual T derivative(std::size_t i) const = 0;

  Tensor<T> input_;
  Tensor<T> output_;
};

template <typename T>
class Relu final : public Elementwise<T, LayerKind::relu> {
 public:
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }

 protected:
  T apply(T v) const override { return v > T{0} ? v : T{0}; }
  T derivative(std::size_t i) const override { return this->input_[i] > T{0} ? T{1} : T{0}; }
};

template <typename T>
class LeakyRelu final : public Elementwise<T, LayerKind::leaky_relu> {
 public:
  explicit LeakyRelu(double slope = 0.2) : slope_(static_cast<T>(slope)) {}
  Hyper hyper() const override { return {{"slope", static_cast<double>(slope_)}}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LeakyRelu>(*this); }

 protected:
  T apply(T v) const override { return v > T{0} ? v : slope_ * v; }
  T derivative(std::size_t i) const override { return this->input_[i] > T{0} ? T{1} : slope_; }

 private:
  T slope_;
};

template <typename T>
class Tanh final : public Elementwise<T, LayerKind::tanh> {
 public:
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Tanh>(*this); }

 protected:
  T apply(T v) const override { return std::tanh(v); }
  T derivative(std::size_t i) const override {
    const T t = this->output_[i];
    return T{1} - t * t;
  }
};

/// Mean over C*H*W: (B, C, H, W) -> (B, 1, 1, 1).
template <typename T>
class FlattenMean final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::flatten_mean; }
  Shape output_shape(const Shape& s) const override { return {s.batch, 1, 1, 1}; }

  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape();
    seen_ = true;
    Tensor<T> y(output_shape(x.shape()));
    for (int b = 0; b < x.batch(); ++b) {
      double s = 0.0;
      for (T v : x.item(b)) s += v;
      y[b] = static_cast<T>(s / static_cast<double>(x.shape().item()));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    if (!seen_) throw DimensionError("flatten_mean: backward called before forward");
    if (g.shape() != output_shape(in_shape_)) throw DimensionError("flatten_mean: gradient shape mismatch");
    Tensor<T> dx(in_shape_);
    const T inv = static_cast<T>(1.0 / static_cast<double>(in_shape_.item()));
    for (int b = 0; b < in_shape_.batch; ++b) {
      auto d = dx.item(b);
      std::fill(d.begin(), d.end(), g[b] * inv);
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FlattenMean>(*this); }

 private:
  Shape in_shape_{};
  bool seen_ = false;
};

/// x + norm(conv(relu(norm(conv(x))))) with 3x3 same-size convolutions.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  explicit ResidualBlock(int channels)
      : channels_(channels), conv1_(channels, channels, 3, 1, 1), norm1_(channels),
        conv2_(channels, channels, 3, 1, 1), norm2_(channels) {}

  LayerKind kind() const override { return LayerKind::residual_block; }
  Shape output_shape(const Shape& s) const override { return conv1_.output_shape(s); }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> h = norm2_.forward(conv2_.forward(relu_.forward(norm1_.forward(conv1_.forward(x)))));
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
    return h;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx = conv1_.backward(norm1_.backward(relu_.backward(conv2_.backward(norm2_.backward(g)))));
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    return dx;
  }

  std::vector<Param<T>*> params() override {
    std::vector<Param<T>*> ps;
    for (Layer<T>* l : std::initializer_list<Layer<T>*>{&conv1_, &norm1_, &conv2_, &norm2_})
      for (Param<T>* p : l->params()) ps.push_back(p);
    return ps;
  }
  Hyper hyper() const override { return {{"channels", channels_}}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  int channels_;
  Conv2d<T> conv1_;
  InstanceNorm<T> norm1_;
  Relu<T> relu_;
  Conv2d<T> conv2_;
  InstanceNorm<T> norm2_;
};

/// Ordered layer stack. With `global_residual` set the output is
/// clamp(input + stack(input), -1, 1); the stack then predicts a correction.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network& other) : global_residual_(other.global_residual_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) *this = Network(other);
    return *this;
  }

  Layer<T>& add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
  }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  bool global_residual() const noexcept { return global_residual_; }
  void set_global_residual(bool on) noexcept { global_residual_ = on; }

  Shape output_shape(Shape s) const {
    const Shape in = s;
    for (const auto& l : layers_) s = l->output_shape(s);
    if (global_residual_ && s != in)
      throw DimensionError("global residual needs output shape " + in.str() + ", got " + s.str());
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h);
    if (global_residual_) {
      require_same_shape(h, x, "global residual");
      residual_mask_.assign(h.size(), 1);
      for (std::size_t i = 0; i < h.size(); ++i) {
        const T v = x[i] + h[i];
        if (v < T{-1} || v > T{1}) residual_mask_[i] = 0;
        h[i] = std::clamp(v, T{-1}, T{1});
      }
    }
    forwarded_ = true;
    return h;
  }

  /// Returns dL/dinput; parameter gradients accumulate.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (!forwarded_) throw DimensionError("network: backward called before forward");
    Tensor<T> g = grad_out;
    if (global_residual_) {
      if (g.size() != residual_mask_.size()) throw DimensionError("network: gradient shape mismatch");
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= residual_mask_[i];
    }
    const Tensor<T> through_clamp = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    if (global_residual_)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += through_clamp[i];
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> ps;
    for (auto& l : layers_)
      for (Param<T>* p : l->params()) ps.push_back(p);
    return ps;
  }
  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> ps;
    for (const auto& l : layers_)
      for (const Param<T>* p : l->params()) ps.push_back(p);
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Param<T>* p : params()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (Param<T>* p : params()) std::fill(p->grad.begin(), p->grad.end(), T{0});
  }

  /// Number of top-level layers of a kind.
  std::size_t count(LayerKind k) const {
    return static_cast<std::size_t>(
        std::count_if(layers_.begin(), layers_.end(), [k](const auto& l) { return l->kind() == k; }));
  }

  /// Copies parameter values from a network of identical layout.
  template <typename U>
  void copy_parameters_from(const Network<U>& other) {
    auto dst = params();
    auto src = other.params();
    if (dst.size() != src.size()) throw DimensionError("copy_parameters_from: layout mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i]->size() != src[i]->size()) throw DimensionError("copy_parameters_from: layout mismatch");
      std::transform(src[i]->value.begin(), src[i]->value.end(), dst[i]->value.begin(),
                     [](U v) { return static_cast<T>(v); });
    }
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool global_residual_ = false;
  std::vector<T> residual_mask_;
  bool forwarded_ = false;
};

/// Channel count the first layer accepts.
template <typename T>
int input_channels(const Network<T>& net) {
  if (net.size() == 0) throw DimensionError("input_channels: empty network");
  for (const auto& [key, value] : net.layer(0).hyper())
    if (key == "in" || key == "channels") return static_cast<int>(value);
  throw DimensionError("input_channels: first layer has no channel count");
}

/// Weights ~ N(0, std^2), biases and shifts 0, norm scales 1.
template <typename T>
void initialize(Network<T>& net, std::uint64_t seed, double stddev = 0.02) {
  Rng rng(seed);
  for (Param<T>* p : net.params()) {
    switch (p->role) {
      case ParamRole::weight:
        for (T& v : p->value) v = static_cast<T>(rng.normal(0.0, stddev));
        break;
      case ParamRole::bias:
      case ParamRole::shift:
        std::fill(p->value.begin(), p->value.end(), T{0});
        break;
      case ParamRole::scale:
        std::fill(p->value.begin(), p->value.end(), T{1});
        break;
    }
  }
}

/// Sets every weight and bias to zero (norm scales stay 1).
template <typename T>
void zero_weights(Network<T>& net) {
  for (Param<T>* p : net.params())
    if (p->role == ParamRole::weight || p->role == ParamRole::bias || p->role == ParamRole::shift)
      std::fill(p->value.begin(), p->value.end(), T{0});
}

/// Encoder (7x7 conv, two stride-2 3x3 convs), `res_blocks` residual blocks
/// at 4F channels, decoder (two stride-2 transposed convs, 7x7 output conv,
/// tanh) and a clamped global input-to-output residual. Layers start at
/// zero; call initialize().
template <typename T>
Network<T> build_generator(int base_channels = 64, int res_blocks = 6, int image_channels = 3) {
  if (base_channels < 1 || res_blocks < 0 || image_channels < 1)
    throw ConfigError("build_generator: invalid sizes");
  const int F = base_channels;
  Network<T> net;
  net.template emplace<Conv2d<T>>(image_channels, F, 7, 1, 3);
  net.template emplace<InstanceNorm<T>>(F);
  net.template emplace<Relu<T>>();
  net.template emplace<Conv2d<T>>(F, 2 * F, 3, 2, 1);
  net.template emplace<InstanceNorm<T>>(2 * F);
  net.template emplace<Relu<T>>();
  net.template emplace<Conv2d<T>>(2 * F, 4 * F, 3, 2, 1);
  net.template emplace<InstanceNorm<T>>(4 * F);
  net.template emplace<Relu<T>>();
  for (int i = 0; i < res_blocks; ++i) net.template emplace<ResidualBlock<T>>(4 * F);
  net.template emplace<ConvTranspose2d<T>>(4 * F, 2 * F, 3, 2, 1, 1);
  net.template emplace<InstanceNorm<T>>(2 * F);
  net.template emplace<Relu<T>>();
  net.template emplace<ConvTranspose2d<T>>(2 * F, F, 3, 2, 1, 1);
  net.template emplace<InstanceNorm<T>>(F);
  net.template emplace<Relu<T>>();
  net.template emplace<Conv2d<T>>(F, image_channels, 7, 1, 3);
  net.template emplace<Tanh<T>>();
  net.set_global_residual(true);
  return net;
}

/// Four stride-2 4x4 conv blocks with leaky ReLU(0.2) (instance norm from
/// the second block), a 3x3 conv to one channel and a mean: one raw score
/// per batch item.
template <typename T>
Network<T> build_discriminator(int base_channels = 64, int image_channels = 3) {
  if (base_channels < 1 || image_channels < 1) throw ConfigError("build_discriminator: invalid sizes");
  const int F = base_channels;
  Network<T> net;
  net.template emplace<Conv2d<T>>(image_channels, F, 4, 2, 1);
  net.template emplace<LeakyRelu<T>>(0.2);
  int ch = F;
  for (int i = 1; i < 4; ++i) {
    net.template emplace<Conv2d<T>>(ch, 2 * ch, 4, 2, 1);
    net.template emplace<InstanceNorm<T>>(2 * ch);
    net.template emplace<LeakyRelu<T>>(0.2);
    ch *= 2;
  }
  net.template emplace<Conv2d<T>>(ch, 1, 3, 1, 1);
  net.template emplace<FlattenMean<T>>();
  return net;
}

/// Builds a single layer from checkpoint hyperparameters.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(LayerKind kind, const std::map<std::string, double>& h) {
  auto get = [&](const char* key) {
    auto it = h.find(key);
    if (it == h.end()) throw FormatError(std::string("missing hyperparameter '") + key + "' for " + kind_name(kind));
    return it->second;
  };
  auto geti = [&](const char* key) { return static_cast<int>(get(key)); };
  switch (kind) {
    case LayerKind::conv2d:
      return std::make_unique<Conv2d<T>>(geti("in"), geti("out"), geti("kernel"), geti("stride"), geti("padding"));
    case LayerKind::conv_transpose2d:
      return std::make_unique<ConvTranspose2d<T>>(geti("in"), geti("out"), geti("kernel"), geti("stride"),
                                                  geti("padding"), geti("output_padding"));
    case LayerKind::instance_norm: return std::make_unique<InstanceNorm<T>>(geti("channels"), get("eps"));
    case LayerKind::relu: return std::make_unique<Relu<T>>();
    case LayerKind::leaky_relu: return std::make_unique<LeakyRelu<T>>(get("slope"));
    case LayerKind::tanh: return std::make_unique<Tanh<T>>();
    case LayerKind::residual_block: return std::make_unique<ResidualBlock<T>>(geti("channels"));
    case LayerKind::flatten_mean: return std::make_unique<FlattenMean<T>>();
  }
  throw FormatError("unknown layer kind");
}

/// Same layout and parameter values in another scalar type (gradients zeroed).
template <typename U, typename T>
Network<U> convert(const Network<T>& net) {
  Network<U> out;
  for (std::size_t i = 0; i < net.size(); ++i) {
    std::map<std::string, double> h;
    for (const auto& [k, v] : net.layer(i).hyper()) h[k] = v;
    out.add(make_layer<U>(net.layer(i).kind(), h));
  }
  out.set_global_residual(net.global_residual());
  out.copy_parameters_from(net);
  return out;
}

}  // namespace deblur::nn
