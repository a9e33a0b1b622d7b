#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/nn.hpp"
#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

namespace deblur::losses {

enum class GanKind { original, lsgan, wgan, wgan_gp };

struct GanVariant {
  GanKind kind = GanKind::lsgan;
  double label_fake = 0.0;     // a
  double label_real = 1.0;     // b
  double label_target = 1.0;   // c: what G wants D to output on fakes
  double gp_lambda = 10.0;
  double clip_c = 0.01;
  /// Use the saturating log(1 - sigmoid(D(G(z)))) generator loss for kind=original.
  bool minimax_generator = false;

  bool is_wasserstein() const noexcept { return kind == GanKind::wgan || kind == GanKind::wgan_gp; }

  void validate() const {
    if (!(gp_lambda >= 0.0)) throw ConfigError("gp_lambda must be >= 0");
    if (!(clip_c > 0.0)) throw ConfigError("clip_c must be > 0");
  }

  /// Accepts gan | lsgan | wgan | wgan-gp (also "original", "wgan_gp").
  static GanVariant parse(const std::string& name) {
    GanVariant v;
    if (name == "gan" || name == "original") v.kind = GanKind::original;
    else if (name == "lsgan") v.kind = GanKind::lsgan;
    else if (name == "wgan") v.kind = GanKind::wgan;
    else if (name == "wgan-gp" || name == "wgan_gp") v.kind = GanKind::wgan_gp;
    else throw ConfigError("unknown GAN variant '" + name + "' (expected gan|lsgan|wgan|wgan-gp)");
    return v;
  }

  std::string name() const {
    switch (kind) {
      case GanKind::original: return "gan";
      case GanKind::lsgan: return "lsgan";
      case GanKind::wgan: return "wgan";
      case GanKind::wgan_gp: return "wgan-gp";
    }
    return "?";
  }
};

struct DLoss {
  double value = 0.0;
  std::vector<double> grad_real;
  std::vector<double> grad_fake;
};

struct GLoss {
  double value = 0.0;
  std::vector<double> grad_fake;
};

namespace detail {

inline void require_finite(std::span<const double> s, const char* what) {
  for (double v : s)
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite score");
}

inline double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

/// Discriminator objective for raw scores on real and fake batches.
///   original: -[mean log s(r) + mean log(1 - s(f))]   (s = logistic sigmoid)
///   lsgan:    1/2 mean (r - b)^2 + 1/2 mean (f - a)^2
///   wgan(_gp): mean f - mean r   (gradient penalty is separate)
inline DLoss d_loss(const GanVariant& v, std::span<const double> real, std::span<const double> fake) {
  detail::require_finite(real, "d_loss");
  detail::require_finite(fake, "d_loss");
  if (real.empty() || fake.empty()) throw DimensionError("d_loss: empty score batch");
  const double nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
  DLoss out;
  out.grad_real.resize(real.size());
  out.grad_fake.resize(fake.size());
  switch (v.kind) {
    case GanKind::original:
      for (std::size_t i = 0; i < real.size(); ++i) {
        out.value += detail::softplus(-real[i]) / nr;
        out.grad_real[i] = (detail::sigmoid(real[i]) - 1.0) / nr;
      }
      for (std::size_t i = 0; i < fake.size(); ++i) {
        out.value += detail::softplus(fake[i]) / nf;
        out.grad_fake[i] = detail::sigmoid(fake[i]) / nf;
      }
      break;
    case GanKind::lsgan:
      for (std::size_t i = 0; i < real.size(); ++i) {
        const double d = real[i] - v.label_real;
        out.value += 0.5 * d * d / nr;
        out.grad_real[i] = d / nr;
      }
      for (std::size_t i = 0; i < fake.size(); ++i) {
        const double d = fake[i] - v.label_fake;
        out.value += 0.5 * d * d / nf;
        out.grad_fake[i] = d / nf;
      }
      break;
    case GanKind::wgan:
    case GanKind::wgan_gp:
      for (std::size_t i = 0; i < real.size(); ++i) {
        out.value -= real[i] / nr;
        out.grad_real[i] = -1.0 / nr;
      }
      for (std::size_t i = 0; i < fake.size(); ++i) {
        out.value += fake[i] / nf;
        out.grad_fake[i] = 1.0 / nf;
      }
      break;
  }
  return out;
}

/// Generator adversarial objective on D's raw scores for restored images.
///   original: -mean log s(f)  (non-saturating; minimax: mean log(1 - s(f)))
///   lsgan:    1/2 mean (f - c)^2
///   wgan(_gp): -mean f
inline GLoss g_adv_loss(const GanVariant& v, std::span<const double> fake) {
  detail::require_finite(fake, "g_adv_loss");
  if (fake.empty()) throw DimensionError("g_adv_loss: empty score batch");
  const double n = static_cast<double>(fake.size());
  GLoss out;
  out.grad_fake.resize(fake.size());
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const double f = fake[i];
    switch (v.kind) {
      case GanKind::original:
        if (v.minimax_generator) {
          out.value -= detail::softplus(f) / n;
          out.grad_fake[i] = -detail::sigmoid(f) / n;
        } else {
          out.value += detail::softplus(-f) / n;
          out.grad_fake[i] = (detail::sigmoid(f) - 1.0) / n;
        }
        break;
      case GanKind::lsgan: {
        const double d = f - v.label_target;
        out.value += 0.5 * d * d / n;
        out.grad_fake[i] = d / n;
        break;
      }
      case GanKind::wgan:
      case GanKind::wgan_gp:
        out.value -= f / n;
        out.grad_fake[i] = -1.0 / n;
        break;
    }
  }
  return out;
}

/// Raw per-item scores of a (B, 1, 1, 1) discriminator output.
template <typename T>
std::vector<double> scores(const Tensor<T>& d_out) {
  if (d_out.shape().item() != 1) throw DimensionError("scores: expected one value per batch item");
  std::vector<double> s(d_out.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(d_out[i]);
  return s;
}

/// Packs per-item score gradients into a (B, 1, 1, 1) tensor.
template <typename T>
Tensor<T> score_grad(std::span<const double> g) {
  Tensor<T> t(static_cast<int>(g.size()), 1, 1, 1);
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<T>(g[i]);
  return t;
}

struct GradientPenalty {
  double value = 0.0;
  std::vector<double> grad_norms;  // ||dD/dx_hat|| per batch item
  std::vector<double> mix;         // interpolation weight per batch item
};

/// x_hat = mix * x_real + (1 - mix) * x_fake, mix ~ U(0, 1) per item.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x_real, const Tensor<T>& x_fake, std::span<const double> mix) {
  require_same_shape(x_real, x_fake, "interpolate");
  Tensor<T> out(x_real.shape());
  for (int b = 0; b < x_real.batch(); ++b) {
    auto r = x_real.item(b), f = x_fake.item(b);
    auto o = out.item(b);
    for (std::size_t i = 0; i < o.size(); ++i)
      o[i] = static_cast<T>(mix[b] * r[i] + (1.0 - mix[b]) * f[i]);
  }
  return out;
}

/// Per-item input gradients of D (unit output gradient) without touching
/// D's accumulated parameter gradients.
template <typename T>
Tensor<T> input_gradient(nn::Network<T>& D, const Tensor<T>& x) {
  std::vector<std::vector<T>> saved;
  auto ps = D.params();
  saved.reserve(ps.size());
  for (auto* p : ps) saved.push_back(p->grad);
  const Tensor<T> out = D.forward(x);
  Tensor<T> grad = D.backward(Tensor<T>(out.shape(), T{1}));
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->grad = std::move(saved[i]);
  return grad;
}

/// lambda * mean_b (||grad_x D(x_hat_b)|| - 1)^2 at random interpolates.
///
/// With `accumulate_param_grads`, the penalty's gradient with respect to D's
/// parameters is added to D's gradient buffers. The mixed second derivative
/// is approximated by a central difference of parameter gradients along the
/// unit input-gradient direction u_b:
///   dP/dtheta ~= sum_b c_b [grad_theta D(x_hat_b + h u_b) - grad_theta D(x_hat_b - h u_b)] / 2h
/// with c_b = 2 lambda (||g_b|| - 1) / B.
/// Single-precision critics are evaluated on a double copy: the difference
/// above is a small second-order signal that float rounding swamps.
template <typename T>
GradientPenalty gradient_penalty(nn::Network<T>& D, const Tensor<T>& x_real, const Tensor<T>& x_fake,
                                 double lambda, std::uint64_t seed, bool accumulate_param_grads = true) {
  require_same_shape(x_real, x_fake, "gradient_penalty");
  if constexpr (!std::is_same_v<T, double>) {
    nn::Network<double> wide = nn::convert<double>(D);
    GradientPenalty gp = gradient_penalty(wide, x_real.template cast<double>(), x_fake.template cast<double>(),
                                          lambda, seed, accumulate_param_grads);
    if (accumulate_param_grads) {
      auto dst = D.params();
      auto src = wide.params();
      for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i]->size(); ++j) dst[i]->grad[j] += static_cast<T>(src[i]->grad[j]);
    }
    return gp;
  }
  const int B = x_real.batch();
  GradientPenalty gp;
  Rng rng(seed);
  gp.mix.resize(B);
  for (double& m : gp.mix) m = rng.uniform();

  const Tensor<T> x_hat = interpolate(x_real, x_fake, gp.mix);
  Tensor<T> g = input_gradient(D, x_hat);

  gp.grad_norms.resize(B);
  std::vector<double> coeff(B, 0.0);
  for (int b = 0; b < B; ++b) {
    double sq = 0.0;
    for (T v : g.item(b)) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    gp.grad_norms[b] = norm;
    gp.value += lambda * (norm - 1.0) * (norm - 1.0) / B;
    coeff[b] = norm > 0.0 ? 2.0 * lambda * (norm - 1.0) / B : 0.0;
    auto gb = g.item(b);
    for (T& v : gb) v = norm > 0.0 ? static_cast<T>(v / norm) : T{0};
  }
  if (!std::isfinite(gp.value)) throw NumericError("gradient_penalty: non-finite value");
  if (!accumulate_param_grads || lambda == 0.0) return gp;

  const double h = std::cbrt(static_cast<double>(std::numeric_limits<T>::epsilon()));
  for (int sign : {1, -1}) {
    Tensor<T> shifted = x_hat;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += static_cast<T>(sign * h) * g[i];
    const Tensor<T> out = D.forward(shifted);
    Tensor<T> weight(out.shape());
    for (int b = 0; b < B; ++b) weight[b] = static_cast<T>(sign * coeff[b] / (2.0 * h));
    D.backward(weight);
  }
  return gp;
}

/// Clamps every parameter of D to [-c, c].
template <typename T>
void clip_weights(nn::Network<T>& D, double c) {
  if (!(c > 0.0)) throw ConfigError("clip_weights: c must be > 0");
  const T lim = static_cast<T>(c);
  for (auto* p : D.params())
    for (T& v : p->value) v = std::clamp(v, -lim, lim);
}

enum class Extractor { conv, identity };

struct ContentLossConfig {
  double weight = 100.0;
  Extractor extractor = Extractor::conv;
  std::uint64_t extractor_seed = 0x5EED'C0DE;
  int extractor_channels = 16;

  void validate() const {
    if (!(weight >= 0.0)) throw ConfigError("content weight must be >= 0");
    if (extractor_channels < 1) throw ConfigError("extractor_channels must be >= 1");
  }
};

/// Frozen feature network: three stride-2 3x3 conv + ReLU layers with
/// He-scaled seeded weights (F, 2F, 4F channels).
template <typename T>
nn::Network<T> build_feature_extractor(int image_channels, int base_channels, std::uint64_t seed) {
  nn::Network<T> net;
  int in = image_channels;
  for (int i = 0; i < 3; ++i) {
    const int out = base_channels << i;
    net.template emplace<nn::Conv2d<T>>(in, out, 3, 2, 1);
    net.template emplace<nn::Relu<T>>();
    in = out;
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto ps = net.layer(i).params();
    if (ps.empty()) continue;
    const double fan_in = static_cast<double>(ps[0]->size()) /
                          static_cast<double>(ps[1]->size());  // in * k * k
    for (T& v : ps[0]->value) v = static_cast<T>(rng.normal(0.0, std::sqrt(2.0 / fan_in)));
  }
  return net;
}

template <typename T>
struct ContentResult {
  double value = 0.0;
  Tensor<T> grad;  // d value / d restored
};

/// weight * mean over taps l of mean((phi_l(restored) - phi_l(sharp))^2),
/// where phi_l is the output of the l-th ReLU of a frozen extractor (one tap
/// for the identity extractor). Holds activation caches, so one instance per
/// thread.
template <typename T>
class ContentLoss {
 public:
  explicit ContentLoss(ContentLossConfig cfg, int image_channels = 3) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.extractor == Extractor::conv)
      extractor_ = build_feature_extractor<T>(image_channels, cfg_.extractor_channels, cfg_.extractor_seed);
  }

  const ContentLossConfig& config() const noexcept { return cfg_; }
  const nn::Network<T>& extractor() const noexcept { return extractor_; }

  ContentResult<T> operator()(const Tensor<T>& restored, const Tensor<T>& sharp) {
    require_same_shape(restored, sharp, "content_loss");
    if (cfg_.extractor == Extractor::identity) return mse(restored, sharp, 1.0);

    const std::vector<Tensor<T>> target = taps(sharp);
    const std::vector<Tensor<T>> feats = taps(restored);  // leaves the caches for this pass
    const double share = 1.0 / static_cast<double>(feats.size());

    ContentResult<T> r;
    std::vector<Tensor<T>> tap_grads;
    for (std::size_t l = 0; l < feats.size(); ++l) {
      ContentResult<T> part = mse(feats[l], target[l], share);
      r.value += part.value;
      tap_grads.push_back(std::move(part.grad));
    }
    // Walk back through the layers, injecting each tap's gradient after its ReLU.
    Tensor<T> g;
    std::size_t tap = feats.size();
    for (std::size_t i = extractor_.size(); i-- > 0;) {
      if (extractor_.layer(i).kind() == nn::LayerKind::relu) {
        Tensor<T>& t = tap_grads[--tap];
        if (g.size() == 0) g = std::move(t);
        else
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += t[k];
      }
      g = extractor_.layer(i).backward(g);
    }
    extractor_.zero_grad();  // frozen
    r.grad = std::move(g);
    return r;
  }

 private:
  std::vector<Tensor<T>> taps(const Tensor<T>& x) {
    std::vector<Tensor<T>> out;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < extractor_.size(); ++i) {
      h = extractor_.layer(i).forward(h);
      if (extractor_.layer(i).kind() == nn::LayerKind::relu) out.push_back(h);
    }
    return out;
  }

  ContentResult<T> mse(const Tensor<T>& a, const Tensor<T>& b, double share) const {
    ContentResult<T> r;
    r.grad = Tensor<T>(a.shape());
    const double n = static_cast<double>(a.size());
    const double w = cfg_.weight * share;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      sum += d * d;
      r.grad[i] = static_cast<T>(2.0 * w * d / n);
    }
    r.value = w * sum / n;
    return r;
  }

  ContentLossConfig cfg_;
  nn::Network<T> extractor_;
};

}  // namespace deblur::losses
