#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deblur/checkpoint.hpp"
#include "deblur/config.hpp"
#include "deblur/degradation.hpp"
#include "deblur/error.hpp"
#include "deblur/image.hpp"
#include "deblur/losses.hpp"
#include "deblur/nn.hpp"
#include "deblur/optim.hpp"
#include "deblur/png_io.hpp"
#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

namespace deblur::train {

inline constexpr int kMinCrop = 32;

/// Training parameters. Keys of the key=value config file are the field names.
struct TrainConfig {
  losses::GanVariant variant{};
  losses::ContentLossConfig content{};
  int epochs = 1;
  int batch_size = 1;
  int crop_size = 256;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  /// 0 selects the variant default: 5 for wgan/wgan-gp, 1 otherwise.
  int d_steps_per_g = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoints written
  std::string log_path;        // empty: log kept in memory only
  int base_channels = 64;
  int res_blocks = 6;
  int d_base_channels = 64;
  int image_channels = 3;
  double init_std = 0.02;
  bool flip = true;
  /// Zero the generator's output conv so training starts from G(z) = z.
  bool identity_start = true;
  /// Stop after this many generator steps (0 = run all epochs).
  long max_steps = 0;

  int effective_d_steps() const {
    if (d_steps_per_g > 0) return d_steps_per_g;
    return variant.is_wasserstein() ? 5 : 1;
  }

  void validate() const {
    variant.validate();
    content.validate();
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (crop_size % 4 != 0) throw ConfigError("crop_size must be a multiple of 4");
    // Four stride-2 convs: below 32 px the last instance norm sees a single
    // pixel, its output is constant and D ignores the image.
    if (crop_size < kMinCrop) throw ConfigError("crop_size must be >= " + std::to_string(kMinCrop));
    if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must be in [0,1)");
    if (d_steps_per_g < 0) throw ConfigError("d_steps_per_g must be >= 0");
    if (base_channels < 1 || d_base_channels < 1 || res_blocks < 0) throw ConfigError("invalid network size");
    if (image_channels != 1 && image_channels != 3) throw ConfigError("image_channels must be 1 or 3");
    if (!(init_std > 0.0)) throw ConfigError("init_std must be > 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  }

  /// Applies key=value overrides; unknown keys are an error.
  void apply(const KeyValues& kv) {
    for (const auto& [k, v] : kv) {
      if (k == "variant") {
        const auto keep = variant;
        variant = losses::GanVariant::parse(v);
        variant.label_fake = keep.label_fake;
        variant.label_real = keep.label_real;
        variant.label_target = keep.label_target;
        variant.gp_lambda = keep.gp_lambda;
        variant.clip_c = keep.clip_c;
        variant.minimax_generator = keep.minimax_generator;
      }
      else if (k == "epochs") epochs = static_cast<int>(parse_long(k, v));
      else if (k == "batch_size") batch_size = static_cast<int>(parse_long(k, v));
      else if (k == "crop_size") crop_size = static_cast<int>(parse_long(k, v));
      else if (k == "lr_g") lr_g = parse_double(k, v);
      else if (k == "lr_d") lr_d = parse_double(k, v);
      else if (k == "beta1") beta1 = parse_double(k, v);
      else if (k == "beta2") beta2 = parse_double(k, v);
      else if (k == "d_steps_per_g") d_steps_per_g = static_cast<int>(parse_long(k, v));
      else if (k == "seed") seed = parse_u64(k, v);
      else if (k == "checkpoint_dir") checkpoint_dir = v;
      else if (k == "log_path") log_path = v;
      else if (k == "base_channels") base_channels = static_cast<int>(parse_long(k, v));
      else if (k == "res_blocks") res_blocks = static_cast<int>(parse_long(k, v));
      else if (k == "d_base_channels") d_base_channels = static_cast<int>(parse_long(k, v));
      else if (k == "image_channels") image_channels = static_cast<int>(parse_long(k, v));
      else if (k == "init_std") init_std = parse_double(k, v);
      else if (k == "flip") flip = parse_bool(k, v);
      else if (k == "identity_start") identity_start = parse_bool(k, v);
      else if (k == "max_steps") max_steps = parse_long(k, v);
      else if (k == "lsgan_a") variant.label_fake = parse_double(k, v);
      else if (k == "lsgan_b") variant.label_real = parse_double(k, v);
      else if (k == "lsgan_c") variant.label_target = parse_double(k, v);
      else if (k == "gp_lambda") variant.gp_lambda = parse_double(k, v);
      else if (k == "clip_c") variant.clip_c = parse_double(k, v);
      else if (k == "minimax_g") variant.minimax_generator = parse_bool(k, v);
      else if (k == "content_weight") content.weight = parse_double(k, v);
      else if (k == "content_extractor") {
        if (v == "conv") content.extractor = losses::Extractor::conv;
        else if (v == "identity") content.extractor = losses::Extractor::identity;
        else throw ConfigError("content_extractor must be conv or identity");
      }
      else if (k == "extractor_channels") content.extractor_channels = static_cast<int>(parse_long(k, v));
      else if (k == "extractor_seed") content.extractor_seed = parse_u64(k, v);
      else throw ConfigError("unknown config key '" + k + "'");
    }
  }
};

/// Decoded blurred/sharp pairs, held in memory as (1, C, H, W) tensors.
struct PairDataset {
  std::vector<Tensor<float>> blurred;
  std::vector<Tensor<float>> sharp;
  std::vector<std::string> names;

  std::size_t size() const noexcept { return sharp.size(); }

  void add(Tensor<float> b, Tensor<float> s, std::string name) {
    if (b.shape() != s.shape()) throw DimensionError("pair " + name + ": blurred and sharp sizes differ");
    blurred.push_back(std::move(b));
    sharp.push_back(std::move(s));
    names.push_back(std::move(name));
  }

  /// Reads a blur manifest; paths resolve relative to the manifest's directory.
  static PairDataset from_manifest(const std::filesystem::path& manifest, int channels = 3) {
    const auto base = manifest.parent_path();
    PairDataset ds;
    for (const ManifestRow& row : read_manifest(manifest)) {
      auto load = [&](const std::string& rel) {
        const std::filesystem::path p = std::filesystem::path(rel).is_absolute() ? std::filesystem::path(rel) : base / rel;
        Image8 img = read_png(p);
        if (channels == 3) img = to_rgb(img);
        else if (img.channels != 1) throw FormatError(p.string() + ": expected a gray image");
        return to_tensor<float>(img);
      };
      ds.add(load(row.blurred), load(row.input), row.input);
    }
    if (ds.size() == 0) throw ConfigError("dataset is empty: " + manifest.string());
    return ds;
  }
};

struct LossRow {
  long step = 0;
  int epoch = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_content = 0.0;
  double gp = 0.0;
};

inline constexpr const char* kLossLogHeader = "step,epoch,d_loss,g_adv,g_content,gp";

inline void write_loss_row(std::ostream& os, const LossRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.epoch, r.d_loss, r.g_adv,
                r.g_content, r.gp);
  os << buf;
}

/// What the discriminator was shown on one D step: `d_input` holds the
/// items scored as real (first `real_count`) followed by those scored as fake.
struct DStepAudit {
  long step;
  int d_iteration;
  const Tensor<float>& d_input;
  int real_count;
  const Tensor<float>& blurred_batch;
  const Tensor<float>& sharp_batch;
  const Tensor<float>& restored_batch;
  const nn::Network<float>& discriminator;  // parameters before this update
  std::span<const double> real_scores;
  std::span<const double> fake_scores;
};

struct TrainResult {
  nn::Network<float> generator;
  nn::Network<float> discriminator;
  std::vector<LossRow> log;
};

namespace detail {

/// Crop (and optionally mirror) the same window out of a blurred/sharp pair.
inline void crop_pair(const Tensor<float>& blurred, const Tensor<float>& sharp, int crop, int top, int left,
                      bool flip, Tensor<float>& out_b, Tensor<float>& out_s, int slot) {
  for (int c = 0; c < sharp.channels(); ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) {
        const int sx = left + (flip ? crop - 1 - x : x);
        out_b.at(slot, c, y, x) = blurred.at(0, c, top + y, sx);
        out_s.at(slot, c, y, x) = sharp.at(0, c, top + y, sx);
      }
}

template <typename T>
void zero_last_conv(nn::Network<T>& net) {
  for (std::size_t i = net.size(); i-- > 0;) {
    if (net.layer(i).kind() != nn::LayerKind::conv2d) continue;
    for (auto* p : net.layer(i).params()) std::fill(p->value.begin(), p->value.end(), T{0});
    return;
  }
}

inline void require_finite(double v, long step, const char* what) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + what + " at step " + std::to_string(step));
}

}  // namespace detail

/// Alternating adversarial training. Per generator step: d_steps updates of
/// D on (sharp = real, G(blurred) = fake), with the gradient penalty for
/// wgan-gp and weight clipping after each update for wgan; then one update
/// of G on the adversarial loss (restored labelled real) plus the content
/// loss against the sharp image. Deterministic for a fixed seed.
class Trainer {
 public:
  using Audit = std::function<void(const DStepAudit&)>;

  Trainer(const PairDataset& data, TrainConfig cfg, std::ostream* progress = nullptr)
      : data_(data), cfg_(std::move(cfg)), progress_(progress),
        content_(cfg_.content, cfg_.image_channels) {
    cfg_.validate();
    if (data_.size() == 0) throw ConfigError("train: empty dataset");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const Shape& s = data_.sharp[i].shape();
      if (s.channels != cfg_.image_channels)
        throw DimensionError("train: " + data_.names[i] + " has " + std::to_string(s.channels) + " channels");
      if (s.height < cfg_.crop_size || s.width < cfg_.crop_size)
        throw DimensionError("train: " + data_.names[i] + " smaller than crop_size");
    }
    generator_ = nn::build_generator<float>(cfg_.base_channels, cfg_.res_blocks, cfg_.image_channels);
    discriminator_ = nn::build_discriminator<float>(cfg_.d_base_channels, cfg_.image_channels);
    nn::initialize(generator_, derive_seed(cfg_.seed, "init/generator"), cfg_.init_std);
    nn::initialize(discriminator_, derive_seed(cfg_.seed, "init/discriminator"), cfg_.init_std);
    if (cfg_.identity_start) detail::zero_last_conv(generator_);
    opt_g_ = optim::Adam<float>({cfg_.lr_g, cfg_.beta1, cfg_.beta2, 1e-8});
    opt_d_ = optim::Adam<float>({cfg_.lr_d, cfg_.beta1, cfg_.beta2, 1e-8});
  }

  void set_audit(Audit audit) { audit_ = std::move(audit); }

  const nn::Network<float>& generator() const noexcept { return generator_; }
  const nn::Network<float>& discriminator() const noexcept { return discriminator_; }
  const std::vector<LossRow>& log() const noexcept { return log_; }

  TrainResult run() {
    namespace fs = std::filesystem;
    std::ofstream log_file;
    if (!cfg_.log_path.empty()) {
      if (fs::path(cfg_.log_path).has_parent_path()) fs::create_directories(fs::path(cfg_.log_path).parent_path());
      log_file.open(cfg_.log_path, std::ios::binary);
      if (!log_file) throw ConfigError("cannot write loss log " + cfg_.log_path);
      log_file << kLossLogHeader << '\n';
    }
    if (!cfg_.checkpoint_dir.empty()) fs::create_directories(cfg_.checkpoint_dir);

    double best_content = std::numeric_limits<double>::infinity();
    bool done = false;
    for (int epoch = 0; epoch < cfg_.epochs && !done; ++epoch) {
      std::vector<std::size_t> order(data_.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle(derive_seed(cfg_.seed, "shuffle/" + std::to_string(epoch)));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

      double epoch_content = 0.0;
      int epoch_steps = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
        LossRow row;
        try {
          row = step(epoch, std::span<const std::size_t>(order).subspan(start, end - start));
        } catch (const NumericError& e) {
          const std::string what = e.what();
          if (what.find("at step") != std::string::npos) throw;
          throw NumericError(what + " at step " + std::to_string(step_));
        }
        log_.push_back(row);
        if (log_file) write_loss_row(log_file, row);
        epoch_content += row.g_content;
        ++epoch_steps;
        if (progress_ && (row.step % 50 == 0 || row.step == 1)) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "step %ld epoch %d d_loss %.5f g_adv %.5f content %.5f gp %.5f\n",
                        row.step, row.epoch, row.d_loss, row.g_adv, row.g_content, row.gp);
          *progress_ << buf << std::flush;
        }
        if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) {
          done = true;
          break;
        }
      }
      if (!cfg_.checkpoint_dir.empty()) {
        const fs::path dir = cfg_.checkpoint_dir;
        nn::save_checkpoint(dir / "generator.ckpt", generator_);
        nn::save_checkpoint(dir / "discriminator.ckpt", discriminator_);
        const double mean_content = epoch_content / std::max(epoch_steps, 1);
        if (mean_content < best_content) {
          best_content = mean_content;
          nn::save_checkpoint(dir / "generator_best.ckpt", generator_);
        }
      }
    }
    if (cfg_.epochs == 0 && !cfg_.checkpoint_dir.empty()) {
      nn::save_checkpoint(fs::path(cfg_.checkpoint_dir) / "generator.ckpt", generator_);
      nn::save_checkpoint(fs::path(cfg_.checkpoint_dir) / "discriminator.ckpt", discriminator_);
    }
    return {generator_, discriminator_, log_};
  }

 private:
  LossRow step(int epoch, std::span<const std::size_t> indices) {
    ++step_;
    const int B = static_cast<int>(indices.size());
    const Shape& s0 = data_.sharp[indices[0]].shape();
    const int crop = cfg_.crop_size;
    Tensor<float> blurred(B, s0.channels, crop, crop), sharp(B, s0.channels, crop, crop);
    Rng aug(derive_seed(cfg_.seed, "augment/" + std::to_string(step_)));
    for (int i = 0; i < B; ++i) {
      const Tensor<float>& sb = data_.blurred[indices[i]];
      const Tensor<float>& ss = data_.sharp[indices[i]];
      const int top = static_cast<int>(aug.below(static_cast<std::uint64_t>(ss.height() - crop + 1)));
      const int left = static_cast<int>(aug.below(static_cast<std::uint64_t>(ss.width() - crop + 1)));
      const bool flip = aug.uniform() < 0.5;
      detail::crop_pair(sb, ss, crop, top, left, cfg_.flip && flip, blurred, sharp, i);
    }

    LossRow row;
    row.step = step_;
    row.epoch = epoch;

    // Discriminator: G is fixed during these updates, so one restored batch serves all of them.
    const Tensor<float> restored = generator_.forward(blurred);
    const Tensor<float> pair[] = {sharp, restored};
    const Tensor<float> both = stack<float>(pair);
    for (int k = 0; k < cfg_.effective_d_steps(); ++k) {
      discriminator_.zero_grad();
      const std::vector<double> all = losses::scores(discriminator_.forward(both));
      const std::span<const double> real(all.data(), B), fake(all.data() + B, B);
      if (audit_) audit_({step_, k, both, B, blurred, sharp, restored, discriminator_, real, fake});
      const losses::DLoss dl = losses::d_loss(cfg_.variant, real, fake);
      std::vector<double> grads(dl.grad_real);
      grads.insert(grads.end(), dl.grad_fake.begin(), dl.grad_fake.end());
      discriminator_.backward(losses::score_grad<float>(grads));
      row.d_loss = dl.value;
      if (cfg_.variant.kind == losses::GanKind::wgan_gp) {
        const auto gp = losses::gradient_penalty(discriminator_, sharp, restored, cfg_.variant.gp_lambda,
                                                 derive_seed(cfg_.seed, "gp/" + std::to_string(step_) + "/" +
                                                                            std::to_string(k)));
        row.gp = gp.value;
      }
      detail::require_finite(row.d_loss + row.gp, step_, "discriminator loss");
      opt_d_.step(discriminator_);
      if (cfg_.variant.kind == losses::GanKind::wgan) losses::clip_weights(discriminator_, cfg_.variant.clip_c);
    }

    // Generator.
    generator_.zero_grad();
    const Tensor<float> out = generator_.forward(blurred);
    const std::vector<double> fake_scores = losses::scores(discriminator_.forward(out));
    const losses::GLoss gl = losses::g_adv_loss(cfg_.variant, fake_scores);
    Tensor<float> grad = discriminator_.backward(losses::score_grad<float>(gl.grad_fake));
    const losses::ContentResult<float> cl = content_(out, sharp);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cl.grad[i];
    row.g_adv = gl.value;
    row.g_content = cl.value;
    detail::require_finite(row.g_adv + row.g_content, step_, "generator loss");
    generator_.backward(grad);
    opt_g_.step(generator_);
    return row;
  }

  const PairDataset& data_;
  TrainConfig cfg_;
  std::ostream* progress_;
  losses::ContentLoss<float> content_;
  nn::Network<float> generator_;
  nn::Network<float> discriminator_;
  optim::Adam<float> opt_g_;
  optim::Adam<float> opt_d_;
  std::vector<LossRow> log_;
  long step_ = 0;
  Audit audit_;
};

inline TrainResult train(const PairDataset& data, const TrainConfig& cfg, std::ostream* progress = nullptr) {
  return Trainer(data, cfg, progress).run();
}

/// G applied to one image: reflect-pads H and W up to multiples of 4,
/// runs the generator and crops back. No parameter changes.
template <typename T>
Tensor<T> restore_tensor(nn::Network<T>& generator, const Tensor<T>& image) {
  const int H = image.height(), W = image.width();
  const int PH = (H + 3) / 4 * 4, PW = (W + 3) / 4 * 4;
  Tensor<T> padded(image.batch(), image.channels(), PH, PW);
  for (int b = 0; b < image.batch(); ++b)
    for (int c = 0; c < image.channels(); ++c)
      for (int y = 0; y < PH; ++y)
        for (int x = 0; x < PW; ++x)
          padded.at(b, c, y, x) = image.at(b, c, reflect_index(y, H), reflect_index(x, W));
  const Tensor<T> out = generator.forward(padded);
  Tensor<T> cropped(image.shape());
  for (int b = 0; b < image.batch(); ++b)
    for (int c = 0; c < image.channels(); ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) cropped.at(b, c, y, x) = out.at(b, c, y, x);
  return cropped;
}

/// Restores one PNG with a generator checkpoint. Gray inputs are replicated
/// to RGB for 3-channel generators.
inline void restore(const std::filesystem::path& image_path, const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& output_path) {
  nn::Network<float> g = nn::load_checkpoint<float>(checkpoint_path);
  Image8 img = read_png(image_path);
  const int channels = nn::input_channels(g);
  if (channels == 3) img = to_rgb(img);
  else if (img.channels != channels)
    throw DimensionError("restore: generator expects " + std::to_string(channels) + " channels");
  write_png(output_path, to_image(restore_tensor(g, to_tensor<float>(img))));
}

}  // namespace deblur::train
