// deblur: command-line front end.
//   make-kernel  blur  train  restore  eval  gradcheck  demo
// Exit codes: 0 ok, 1 runtime/numeric failure, 2 usage/config error.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "deblur/checkpoint.hpp"
#include "deblur/config.hpp"
#include "deblur/degradation.hpp"
#include "deblur/demo.hpp"
#include "deblur/gradcheck_suite.hpp"
#include "deblur/metrics.hpp"
#include "deblur/png_io.hpp"
#include "deblur/psf.hpp"
#include "deblur/trainer.hpp"
#include "deblur/trajectory.hpp"

namespace fs = std::filesystem;
using namespace deblur;

namespace {

struct TrajectoryFlags {
  int iterations = 2000;
  double max_length = 60.0;
  std::optional<double> gaussian_std, impulse_prob, impulse_scale, inertia;

  void add_to(CLI::App& app) {
    app.add_option("--iterations", iterations, "random-walk steps")->capture_default_str();
    app.add_option("--max-length", max_length, "trajectory length bound in pixels")->capture_default_str();
    app.add_option("--gaussian-std", gaussian_std, "per-step Gaussian jitter");
    app.add_option("--impulse-prob", impulse_prob, "probability of an abrupt shake per step");
    app.add_option("--impulse-scale", impulse_scale, "abrupt shake magnitude");
    app.add_option("--inertia", inertia, "velocity persistence in [0,1]");
  }

  TrajectoryConfig build() const {
    TrajectoryConfig c = TrajectoryConfig::defaults(iterations, max_length);
    if (gaussian_std) {
      c.gaussian_std = *gaussian_std;
      c.impulse_scale = 10.0 * *gaussian_std;
    }
    if (impulse_prob) c.impulse_prob = *impulse_prob;
    if (impulse_scale) c.impulse_scale = *impulse_scale;
    if (inertia) c.inertia = *inertia;
    c.validate();
    return c;
  }
};

Padding parse_padding(const std::string& s) {
  if (s == "reflect") return Padding::reflect;
  if (s == "zero") return Padding::zero;
  throw ConfigError("padding must be reflect or zero");
}

BlurKernel load_kernel(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open kernel " + path.string());
  return read_psf1(is);
}

std::string variant_label(const fs::path& detections) { return detections.stem().string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-blur synthesis, GAN deblurring and detection scoring"};
  app.require_subcommand(1, 1);

  // make-kernel
  auto* mk = app.add_subcommand("make-kernel", "write one PSF1 kernel and its PNG visualization");
  std::uint64_t mk_seed = 0;
  int mk_size = 31;
  int mk_samples = 2;
  fs::path mk_out;
  std::optional<fs::path> mk_png;
  TrajectoryFlags mk_traj;
  mk->add_option("--seed", mk_seed)->required();
  mk->add_option("--size", mk_size, "odd kernel size")->capture_default_str();
  mk->add_option("--out", mk_out, "PSF1 output path")->required();
  mk->add_option("--png", mk_png, "visualization path (default: <out> with .png)");
  mk->add_option("--samples-per-segment", mk_samples)->capture_default_str();
  mk_traj.add_to(*mk);

  // blur
  auto* bl = app.add_subcommand("blur", "blur a directory of sharp images");
  fs::path bl_in, bl_out;
  std::optional<fs::path> bl_kernel;
  DegradationConfig bl_cfg;
  std::string bl_padding = "reflect";
  TrajectoryFlags bl_traj;
  bl->add_option("--in", bl_in)->required();
  bl->add_option("--out", bl_out)->required();
  bl->add_option("--seed", bl_cfg.seed)->required();
  bl->add_option("--noise-std", bl_cfg.noise_std)->capture_default_str();
  bl->add_option("--kernel-size", bl_cfg.kernel_size, "minimum odd kernel size")->capture_default_str();
  bl->add_option("--samples-per-segment", bl_cfg.samples_per_segment)->capture_default_str();
  bl->add_option("--padding", bl_padding, "reflect or zero")->capture_default_str();
  bl->add_option("--kernel", bl_kernel, "use this PSF1 kernel for every image");
  bl_traj.add_to(*bl);

  // train
  auto* tr = app.add_subcommand("train", "train a generator on a blur manifest");
  fs::path tr_pairs;
  std::optional<fs::path> tr_config;
  std::optional<std::string> tr_variant, tr_ckpt, tr_log;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_epochs, tr_batch, tr_crop;
  std::optional<long> tr_max_steps;
  tr->add_option("--pairs", tr_pairs, "manifest.csv from blur")->required();
  tr->add_option("--variant", tr_variant, "gan | lsgan | wgan | wgan-gp");
  tr->add_option("--config", tr_config, "key=value file");
  tr->add_option("--seed", tr_seed);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--crop-size", tr_crop);
  tr->add_option("--max-steps", tr_max_steps);
  tr->add_option("--checkpoint-dir", tr_ckpt, "default: checkpoints");
  tr->add_option("--log", tr_log, "default: <checkpoint-dir>/loss_log.csv");

  // restore
  auto* rs = app.add_subcommand("restore", "deblur one image with a generator checkpoint");
  fs::path rs_in, rs_ckpt, rs_out;
  rs->add_option("--in", rs_in)->required();
  rs->add_option("--ckpt", rs_ckpt)->required();
  rs->add_option("--out", rs_out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "score detection files against ground truth");
  fs::path ev_truth, ev_report;
  std::vector<fs::path> ev_dets;
  double ev_thresh = 0.5;
  ev->add_option("--truth", ev_truth)->required();
  ev->add_option("--detections", ev_dets, "one JSONL file per variant")->required();
  ev->add_option("--report", ev_report, "CSV path; the table goes to stdout and <report>.txt")->required();
  ev->add_option("--iou", ev_thresh)->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  nn::SuiteOptions gc_opt;
  std::optional<std::string> gc_fault;
  gc->add_option("--eps", gc_opt.eps)->capture_default_str();
  gc->add_option("--inject-fault", gc_fault, "corrupt this layer kind's backward (self-test)");

  // demo
  auto* dm = app.add_subcommand("demo", "end-to-end desk-scale run");
  fs::path dm_out;
  demo::DemoOptions dm_opt;
  dm->add_option("--out", dm_out)->required();
  dm->add_option("--seed", dm_opt.seed)->capture_default_str();
  dm->add_option("--steps", dm_opt.steps)->capture_default_str();
  dm->add_option("--variant", dm_opt.variant)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*mk) {
      if (mk_size < 1 || mk_size % 2 == 0) throw ConfigError("--size must be odd and positive");
      if (mk_samples < 1) throw ConfigError("--samples-per-segment must be >= 1");
      TrajectoryConfig tc = mk_traj.build();
      tc.seed = derive_seed(mk_seed, "trajectory");
      const BlurKernel k = rasterize_kernel(generate_trajectory(tc), mk_size, mk_samples);
      if (mk_out.has_parent_path()) fs::create_directories(mk_out.parent_path());
      {
        std::ofstream os(mk_out, std::ios::binary);
        if (!os) throw FormatError("cannot write " + mk_out.string());
        write_psf1(os, k);
      }
      fs::path png = mk_png.value_or(fs::path(mk_out).replace_extension(".png"));
      write_png(png, kernel_to_image(k));
      std::cout << "wrote " << mk_out.string() << " and " << png.string() << '\n';
    } else if (*bl) {
      bl_cfg.padding = parse_padding(bl_padding);
      if (bl_kernel) bl_cfg.fixed_kernel = load_kernel(*bl_kernel);
      const auto rows = blur_corpus(bl_in, bl_out, bl_traj.build(), bl_cfg, std::cerr);
      std::cout << "blurred " << rows.size() << " images; manifest " << (bl_out / "manifest.csv").string() << '\n';
    } else if (*tr) {
      train::TrainConfig cfg;
      if (tr_config) cfg.apply(load_key_values(*tr_config));
      if (tr_variant) cfg.apply({{"variant", *tr_variant}});
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_batch) cfg.batch_size = *tr_batch;
      if (tr_crop) cfg.crop_size = *tr_crop;
      if (tr_max_steps) cfg.max_steps = *tr_max_steps;
      if (tr_ckpt) cfg.checkpoint_dir = *tr_ckpt;
      if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = "checkpoints";
      if (tr_log) cfg.log_path = *tr_log;
      if (cfg.log_path.empty()) cfg.log_path = (fs::path(cfg.checkpoint_dir) / "loss_log.csv").string();
      cfg.validate();
      const auto data = train::PairDataset::from_manifest(tr_pairs, cfg.image_channels);
      const auto result = train::train(data, cfg, &std::cerr);
      std::cout << "trained " << result.log.size() << " steps; checkpoints in " << cfg.checkpoint_dir << '\n';
    } else if (*rs) {
      train::restore(rs_in, rs_ckpt, rs_out);
    } else if (*ev) {
      std::ifstream tis(ev_truth);
      if (!tis) throw FormatError("cannot open " + ev_truth.string());
      const auto truth = metrics::read_detections(tis);
      std::vector<metrics::ReportRow> rows;
      for (const auto& path : ev_dets) {
        std::ifstream dis(path);
        if (!dis) throw FormatError("cannot open " + path.string());
        const auto dets = metrics::read_detections(dis);
        rows.push_back({variant_label(path), metrics::match_and_score(dets, truth, ev_thresh)});
      }
      if (ev_report.has_parent_path()) fs::create_directories(ev_report.parent_path());
      {
        std::ofstream csv(ev_report, std::ios::binary);
        if (!csv) throw FormatError("cannot write " + ev_report.string());
        metrics::write_report_csv(csv, rows);
      }
      std::ofstream txt(fs::path(ev_report).replace_extension(".txt"), std::ios::binary);
      metrics::write_report_table(txt, rows);
      metrics::write_report_table(std::cout, rows);
    } else if (*gc) {
      if (gc_fault) {
        try {
          gc_opt.fault = nn::kind_from_name(*gc_fault);
        } catch (const FormatError& e) {
          throw ConfigError(std::string("--inject-fault: ") + e.what());
        }
      }
      const auto entries = nn::run_gradcheck_suite(gc_opt);
      for (const auto& e : entries) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3e", e.max_rel);
        std::cout << (e.max_rel < gc_opt.tolerance ? "ok    " : "FAIL  ") << e.name << "  " << buf << '\n';
      }
      return nn::suite_passes(entries, gc_opt.tolerance) ? 0 : 1;
    } else if (*dm) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = demo::run_demo(dm_out, dm_opt, &std::cerr);
      metrics::write_report_table(std::cout, r.report);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "steps " << r.steps << ", " << secs << " s\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const KernelOverflowError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
