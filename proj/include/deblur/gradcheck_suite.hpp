#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deblur/gradcheck.hpp"
#include "deblur/losses.hpp"
#include "deblur/nn.hpp"
#include "deblur/rng.hpp"

namespace deblur::nn {

/// Test double: a layer whose backward returns a slightly wrong input
/// gradient. Used to confirm the checker actually fails.
template <typename T>
class FaultyLayer final : public Layer<T> {
 public:
  explicit FaultyLayer(std::unique_ptr<Layer<T>> inner, double scale = 1.05) : inner_(std::move(inner)), scale_(scale) {}
  LayerKind kind() const override { return inner_->kind(); }
  Shape output_shape(const Shape& in) const override { return inner_->output_shape(in); }
  Tensor<T> forward(const Tensor<T>& x) override { return inner_->forward(x); }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> out = inner_->backward(g);
    for (T& v : out.storage()) v = static_cast<T>(v * scale_);
    return out;
  }
  std::vector<Param<T>*> params() override { return inner_->params(); }
  Hyper hyper() const override { return inner_->hyper(); }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<FaultyLayer>(inner_->clone(), scale_);
  }

 private:
  std::unique_ptr<Layer<T>> inner_;
  double scale_;
};

struct SuiteEntry {
  std::string name;
  double max_rel = 0.0;
};

struct SuiteOptions {
  double eps = 1e-4;
  double tolerance = 1e-4;
  std::optional<LayerKind> fault;  // corrupt this layer kind's backward
};

namespace suite_detail {

inline Tensor<double> uniform(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  Rng rng(seed);
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// Entries in [-1, -0.05] U [0.05, 1]: clear of the ReLU kinks.
inline Tensor<double> away_from_zero(Shape s, std::uint64_t seed) {
  Tensor<double> t = uniform(s, seed);
  for (double& v : t.storage())
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 - v : 0.05 + v;
  return t;
}

/// Non-trivial biases and affine parameters, so no activation sits on a kink.
inline void jitter_affine(Network<double>& net, std::uint64_t seed) {
  Rng rng(seed);
  for (Param<double>* p : net.params())
    if (p->role != ParamRole::weight)
      for (double& v : p->value) v += rng.uniform(-0.3, 0.3);
}

inline std::map<std::string, double> single_layer_hyper(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return {{"in", 2}, {"out", 3}, {"kernel", 3}, {"stride", 2}, {"padding", 1}};
    case LayerKind::conv_transpose2d:
      return {{"in", 2}, {"out", 3}, {"kernel", 3}, {"stride", 2}, {"padding", 1}, {"output_padding", 1}};
    case LayerKind::instance_norm: return {{"channels", 2}, {"eps", 1e-5}};
    case LayerKind::leaky_relu: return {{"slope", 0.2}};
    case LayerKind::residual_block: return {{"channels", 2}};
    default: return {};
  }
}

/// Central difference of a scalar function of one variable.
inline double derivative(const std::function<double(double)>& f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2 * eps);
}

}  // namespace suite_detail

/// One-layer network of `kind` sized for (2, 2, 5, 5) inputs.
inline Network<double> single_layer_network(LayerKind kind, bool faulty = false) {
  Network<double> net;
  auto layer = make_layer<double>(kind, suite_detail::single_layer_hyper(kind));
  if (faulty) net.add(std::make_unique<FaultyLayer<double>>(std::move(layer)));
  else net.add(std::move(layer));
  initialize(net, 17, 0.5);
  suite_detail::jitter_affine(net, 18);
  return net;
}

/// Max relative error of backprop against central differences for one layer kind.
inline double check_layer_kind(LayerKind kind, double eps = 1e-4, bool faulty = false) {
  Network<double> net = single_layer_network(kind, faulty);
  const Tensor<double> x = suite_detail::away_from_zero({2, 2, 5, 5}, 21);
  const Shape out = net.output_shape(x.shape());
  return grad_check(net, x, linear_probe(suite_detail::uniform(out, 22)), eps).max_rel();
}

/// Every analytic gradient in the library against central differences
/// (64-bit): each layer kind, small G and D, each adversarial loss link,
/// the content loss and the gradient-penalty input-gradient pass.
inline std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& opt = {}) {
  using namespace suite_detail;
  std::vector<SuiteEntry> out;
  const double eps = opt.eps;

  for (LayerKind kind : kAllLayerKinds)
    out.push_back({std::string("layer/") + kind_name(kind), check_layer_kind(kind, eps, opt.fault == kind)});

  {
    Network<double> g = build_generator<double>(2, 1, 1);
    initialize(g, 5, 0.3);
    jitter_affine(g, 55);
    const auto x = uniform({1, 1, 8, 8}, 6, -0.5, 0.5);
    out.push_back({"network/generator", grad_check(g, x, linear_probe(uniform(x.shape(), 7)), eps).max_rel()});
  }
  {
    Network<double> d = build_discriminator<double>(2, 1);
    initialize(d, 8, 0.3);
    jitter_affine(d, 88);
    // 32 px is the smallest input D is not constant on. With ~3000 LeakyReLU
    // inputs some seeds put one within eps of its kink, where the central
    // difference (not backprop) is wrong; this probe point clears them.
    const auto x = uniform({1, 1, 32, 32}, 3);
    out.push_back({"network/discriminator", grad_check(d, x, linear_probe(uniform({1, 1, 1, 1}, 10)), eps).max_rel()});
  }

  using losses::GanVariant;
  GanVariant minimax = GanVariant::parse("gan");
  minimax.minimax_generator = true;
  const std::pair<std::string, GanVariant> variants[] = {{"gan", GanVariant::parse("gan")},
                                                         {"gan-minimax", minimax},
                                                         {"lsgan", GanVariant::parse("lsgan")},
                                                         {"wgan", GanVariant::parse("wgan")},
                                                         {"wgan-gp", GanVariant::parse("wgan-gp")}};
  Rng rng(31);
  for (const auto& [name, v] : variants) {
    std::vector<double> real(4), fake(4);
    for (double& s : real) s = rng.uniform(-3, 3);
    for (double& s : fake) s = rng.uniform(-3, 3);
    const auto dl = losses::d_loss(v, real, fake);
    const auto gl = losses::g_adv_loss(v, fake);
    double d_err = 0.0, g_err = 0.0;
    for (std::size_t i = 0; i < real.size(); ++i) {
      auto at_real = [&](double s) { auto r = real; r[i] = s; return losses::d_loss(v, r, fake).value; };
      auto at_fake = [&](double s) { auto f = fake; f[i] = s; return losses::d_loss(v, real, f).value; };
      auto g_at = [&](double s) { auto f = fake; f[i] = s; return losses::g_adv_loss(v, f).value; };
      d_err = std::max(d_err, relative_error(dl.grad_real[i], derivative(at_real, real[i], eps)));
      d_err = std::max(d_err, relative_error(dl.grad_fake[i], derivative(at_fake, fake[i], eps)));
      g_err = std::max(g_err, relative_error(gl.grad_fake[i], derivative(g_at, fake[i], eps)));
    }
    if (name != "wgan-gp") {  // same link as wgan
      out.push_back({"loss/d_" + name, d_err});
      out.push_back({"loss/g_" + name, g_err});
    }
  }

  for (auto extractor : {losses::Extractor::conv, losses::Extractor::identity}) {
    losses::ContentLossConfig cfg;
    cfg.weight = 3.0;
    cfg.extractor = extractor;
    cfg.extractor_channels = 4;
    losses::ContentLoss<double> loss(cfg, 2);
    Tensor<double> restored = uniform({2, 2, 8, 8}, 41);
    const auto sharp = uniform({2, 2, 8, 8}, 42);
    const auto r = loss(restored, sharp);
    double err = 0.0;
    for (std::size_t i = 0; i < restored.size(); ++i) {
      auto at = [&](double s) {
        const double keep = restored[i];
        restored[i] = s;
        const double v = loss(restored, sharp).value;
        restored[i] = keep;
        return v;
      };
      err = std::max(err, relative_error(r.grad[i], derivative(at, restored[i], eps)));
    }
    out.push_back({extractor == losses::Extractor::conv ? "loss/content_conv" : "loss/content_identity", err});
  }

  {
    // Input gradient of D as used by the gradient penalty (unit output gradient).
    Network<double> d = build_discriminator<double>(2, 1);
    initialize(d, 51, 0.3);
    jitter_affine(d, 52);
    Tensor<double> x = uniform({2, 1, 32, 32}, 53);
    const Tensor<double> g = losses::input_gradient(d, x);
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto at = [&](double s) {
        const double keep = x[i];
        x[i] = s;
        const Tensor<double> y = d.forward(x);
        x[i] = keep;
        double sum = 0.0;
        for (double v : y.storage()) sum += v;
        return sum;
      };
      err = std::max(err, relative_error(g[i], derivative(at, x[i], eps)));
    }
    out.push_back({"loss/gp_input_gradient", err});
  }
  return out;
}

inline bool suite_passes(const std::vector<SuiteEntry>& entries, double tolerance = 1e-4) {
  for (const auto& e : entries)
    if (!(e.max_rel < tolerance)) return false;
  return true;
}

}  // namespace deblur::nn
