#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "deblur/degradation.hpp"
#include "deblur/metrics.hpp"
#include "deblur/png_io.hpp"
#include "deblur/synthetic.hpp"
#include "deblur/trainer.hpp"

namespace deblur::demo {

struct DemoOptions {
  std::uint64_t seed = 7;
  std::string variant = "lsgan";
  long steps = 300;
  int pairs = 8;
  int image_size = 32;
};

struct DemoResult {
  double psnr_blurred = 0.0;   // mean over pairs
  double psnr_restored = 0.0;
  double ssim_blurred = 0.0;
  double ssim_restored = 0.0;
  double content_first = 0.0;  // g_content of step 1
  double content_last = 0.0;   // mean g_content of the last 10 steps
  long steps = 0;
  std::vector<metrics::ReportRow> report;
};

/// Training settings for the desk-scale runs: small networks, 32 px crops,
/// a heavy content weight (the seeded extractor's features are far smaller
/// than VGG activations, so the default weight of 100 lets the adversarial
/// term dominate) and a high learning rate.
inline train::TrainConfig desk_config(const std::string& variant, std::uint64_t seed, long steps, int crop) {
  train::TrainConfig c;
  c.variant = losses::GanVariant::parse(variant);
  c.epochs = 1'000'000;
  c.max_steps = steps;
  c.batch_size = 4;
  c.crop_size = crop;
  c.base_channels = 8;
  c.res_blocks = 6;
  c.d_base_channels = 8;
  c.lr_g = 1e-3;
  c.lr_d = 1e-3;
  c.content.weight = 5000;
  c.seed = seed;
  return c;
}

inline void write_config(std::ostream& os, const train::TrainConfig& c) {
  os << "variant=" << c.variant.name() << "\nepochs=" << c.epochs << "\nmax_steps=" << c.max_steps
     << "\nbatch_size=" << c.batch_size << "\ncrop_size=" << c.crop_size << "\nbase_channels=" << c.base_channels
     << "\nres_blocks=" << c.res_blocks << "\nd_base_channels=" << c.d_base_channels << "\nlr_g=" << c.lr_g
     << "\nlr_d=" << c.lr_d << "\ncontent_weight=" << c.content.weight << "\nseed=" << c.seed << '\n';
}

/// End-to-end desk-scale run under `out`:
///   sharp/       synthetic faces
///   corpus/      blurred images, PSF1 kernels, manifest.csv
///   train.cfg, loss_log.csv, checkpoints/
///   restored/    G(blurred) per pair
///   report.csv, report.txt  (sharp / blurred / restored rows)
inline DemoResult run_demo(const std::filesystem::path& out, const DemoOptions& opt, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  if (opt.pairs < 1) throw ConfigError("demo: pairs must be >= 1");
  if (opt.steps < 1) throw ConfigError("demo: steps must be >= 1");
  desk_config(opt.variant, opt.seed, opt.steps, opt.image_size).validate();
  fs::create_directories(out / "sharp");
  for (int i = 0; i < opt.pairs; ++i) {
    const std::string name = "face" + std::to_string(i);
    write_png(out / "sharp" / (name + ".png"), synthetic_face(opt.image_size, derive_seed(opt.seed, name)));
  }

  DegradationConfig dc;
  dc.seed = derive_seed(opt.seed, "blur");
  dc.kernel_size = 9;
  std::ostringstream blur_log;
  blur_corpus(out / "sharp", out / "corpus", TrajectoryConfig::defaults(), dc, blur_log);

  const auto data = train::PairDataset::from_manifest(out / "corpus" / "manifest.csv");
  train::TrainConfig cfg = desk_config(opt.variant, derive_seed(opt.seed, "train"), opt.steps, opt.image_size);
  cfg.checkpoint_dir = (out / "checkpoints").string();
  cfg.log_path = (out / "loss_log.csv").string();
  {
    std::ofstream os(out / "train.cfg", std::ios::binary);
    write_config(os, cfg);
  }
  const train::TrainResult trained = train::train(data, cfg, progress);

  DemoResult r;
  r.steps = static_cast<long>(trained.log.size());
  if (!trained.log.empty()) {
    r.content_first = trained.log.front().g_content;
    const std::size_t tail = std::min<std::size_t>(10, trained.log.size());
    for (std::size_t i = trained.log.size() - tail; i < trained.log.size(); ++i)
      r.content_last += trained.log[i].g_content / static_cast<double>(tail);
  }

  fs::create_directories(out / "restored");
  nn::Network<float> g = trained.generator;
  const double n = static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor<float> restored = train::restore_tensor(g, data.blurred[i]);
    write_png(out / "restored" / fs::path(data.names[i]).filename(), to_image(restored));
    // Score what was written, after 8-bit quantization.
    const Tensor<float> saved = to_tensor<float>(to_image(restored));
    r.psnr_blurred += metrics::psnr(data.blurred[i], data.sharp[i]) / n;
    r.psnr_restored += metrics::psnr(saved, data.sharp[i]) / n;
    r.ssim_blurred += metrics::ssim(data.blurred[i], data.sharp[i]) / n;
    r.ssim_restored += metrics::ssim(saved, data.sharp[i]) / n;
  }

  r.report = {{"sharp", std::nullopt, 99.0, 1.0},
              {"blurred", std::nullopt, r.psnr_blurred, r.ssim_blurred},
              {"restored-" + cfg.variant.name(), std::nullopt, r.psnr_restored, r.ssim_restored}};
  {
    std::ofstream csv(out / "report.csv", std::ios::binary);
    metrics::write_report_csv(csv, r.report);
    std::ofstream txt(out / "report.txt", std::ios::binary);
    metrics::write_report_table(txt, r.report);
  }
  return r;
}

}  // namespace deblur::demo
