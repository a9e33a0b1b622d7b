// Runs the deblur binary end to end.
#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "deblur/degradation.hpp"
#include "deblur/metrics.hpp"
#include "deblur/png_io.hpp"
#include "deblur/psf.hpp"
#include "deblur/synthetic.hpp"
#include "deblur/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace deblur;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(DEBLUR_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

/// Three 36x36 faces in dir/sharp.
fs::path face_dir(const fs::path& dir) {
  fs::create_directories(dir / "sharp");
  for (int i = 0; i < 3; ++i)
    write_png(dir / "sharp" / ("f" + std::to_string(i) + ".png"), synthetic_face(36, 300 + i));
  return dir / "sharp";
}

const char* kTinyConfig =
    "# small networks for plumbing tests\n"
    "epochs=1\nbatch_size=2\ncrop_size=32\nbase_channels=2\nres_blocks=1\n"
    "d_base_channels=2\nextractor_channels=2\nseed=5\n";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("make-kernel --seed 1").code, 2);                     // --out missing
  EXPECT_EQ(run("make-kernel --seed x --out /tmp/x.psf").code, 2);   // not a number
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, MakeKernelIsReproducibleAndValidatesSize) {
  const auto dir = testutil::temp_dir("cli_kernel");
  const CliRun a = run("make-kernel --seed 42 --size 15 --out " + q(dir / "a.psf"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(run("make-kernel --seed 42 --size 15 --out " + q(dir / "b.psf")).code, 0);
  EXPECT_EQ(testutil::read_file(dir / "a.psf"), testutil::read_file(dir / "b.psf"));
  EXPECT_TRUE(fs::exists(dir / "a.png"));
  EXPECT_EQ(read_png(dir / "a.png").width, 15);
  EXPECT_NE(testutil::read_file(dir / "a.psf"),
            (run("make-kernel --seed 43 --size 15 --out " + q(dir / "c.psf")), testutil::read_file(dir / "c.psf")));

  EXPECT_EQ(run("make-kernel --seed 42 --size 14 --out " + q(dir / "even.psf")).code, 2);
  EXPECT_FALSE(fs::exists(dir / "even.psf"));
  EXPECT_EQ(run("make-kernel --seed 42 --size 1 --out " + q(dir / "tiny.psf")).code, 2);  // overflow
  EXPECT_EQ(run("make-kernel --seed 42 --inertia 2 --out " + q(dir / "bad.psf")).code, 2);
}

TEST(Cli, KernelFileMatchesInMemoryPipeline) {
  const auto dir = testutil::temp_dir("cli_kernel_rt");
  ASSERT_EQ(run("make-kernel --seed 9 --size 11 --iterations 500 --max-length 20 --out " + q(dir / "k.psf")).code, 0);
  std::ifstream is(dir / "k.psf");
  const BlurKernel loaded = read_psf1(is);

  TrajectoryConfig tc = TrajectoryConfig::defaults(500, 20.0);
  tc.seed = derive_seed(9, "trajectory");
  const BlurKernel mem = rasterize_kernel(generate_trajectory(tc), 11);
  EXPECT_EQ(testutil::read_file(dir / "k.psf"), psf1_string(mem));

  const auto img = testutil::random_tensor({1, 3, 24, 24}, 4);
  // PSF1 keeps 9 significant digits.
  EXPECT_LT(testutil::max_abs_diff(convolve(img, loaded, Padding::reflect), convolve(img, mem, Padding::reflect)),
            1e-8);
}

TEST(Cli, BlurWritesReplayableManifest) {
  const auto dir = testutil::temp_dir("cli_blur");
  const auto sharp = face_dir(dir);
  const std::string args = "blur --in " + q(sharp) + " --seed 77 --kernel-size 7 --noise-std 0.02 --out ";
  ASSERT_EQ(run(args + q(dir / "a")).code, 0);
  ASSERT_EQ(run(args + q(dir / "b")).code, 0);

  const auto rows = read_manifest(dir / "a" / "manifest.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(testutil::read_file(dir / "a" / "manifest.csv"), testutil::read_file(dir / "b" / "manifest.csv"));

  DegradationConfig cfg;
  cfg.seed = 77;
  cfg.kernel_size = 7;
  cfg.noise_std = 0.02;
  for (const auto& r : rows) {
    EXPECT_EQ(testutil::read_file(dir / "a" / r.blurred), testutil::read_file(dir / "b" / r.blurred));
    // Replay from the row alone: seed -> kernel -> blur + noise.
    const BlurKernel k = corpus_kernel(TrajectoryConfig::defaults(), cfg, r.seed);
    EXPECT_EQ(testutil::read_file(dir / "a" / r.kernel), psf1_string(k));
    const Image8 replay = to_image(degrade(to_tensor<double>(read_png(dir / "a" / r.input)), k, cfg, r.seed));
    EXPECT_EQ(read_png(dir / "a" / r.blurred).pixels, replay.pixels);
  }

  EXPECT_EQ(run("blur --in " + q(sharp) + " --seed 1 --noise-std -1 --out " + q(dir / "c")).code, 2);
  EXPECT_EQ(run("blur --in " + q(dir / "missing") + " --seed 1 --out " + q(dir / "c")).code, 2);
  EXPECT_EQ(run("blur --in " + q(sharp) + " --seed 1 --padding wrap --out " + q(dir / "c")).code, 2);
}

TEST(Cli, BlurWithFixedKernel) {
  const auto dir = testutil::temp_dir("cli_blur_fixed");
  const auto sharp = face_dir(dir);
  ASSERT_EQ(run("make-kernel --seed 3 --size 9 --out " + q(dir / "k.psf")).code, 0);
  ASSERT_EQ(run("blur --in " + q(sharp) + " --seed 2 --kernel " + q(dir / "k.psf") + " --out " + q(dir / "o")).code, 0);
  for (const auto& r : read_manifest(dir / "o" / "manifest.csv"))
    EXPECT_EQ(testutil::read_file(dir / "o" / r.kernel), testutil::read_file(dir / "k.psf"));
  write_text(dir / "bad.psf", "PSF1 3\n1 2\n");
  EXPECT_EQ(run("blur --in " + q(sharp) + " --seed 2 --kernel " + q(dir / "bad.psf") + " --out " + q(dir / "p")).code,
            1);
}

TEST(Cli, TrainRestoreRoundTrip) {
  const auto dir = testutil::temp_dir("cli_train");
  const auto sharp = face_dir(dir);
  ASSERT_EQ(run("blur --in " + q(sharp) + " --seed 4 --kernel-size 5 --out " + q(dir / "corpus")).code, 0);
  write_text(dir / "tiny.cfg", kTinyConfig);
  const std::string base =
      "train --pairs " + q(dir / "corpus" / "manifest.csv") + " --config " + q(dir / "tiny.cfg") + " --variant lsgan";

  ASSERT_EQ(run(base + " --checkpoint-dir " + q(dir / "c1")).code, 0);
  ASSERT_EQ(run(base + " --checkpoint-dir " + q(dir / "c2")).code, 0);
  for (const char* f : {"generator.ckpt", "discriminator.ckpt", "loss_log.csv"})
    EXPECT_EQ(testutil::read_file(dir / "c1" / f), testutil::read_file(dir / "c2" / f)) << f;
  // 3 pairs, batch 2, one epoch: 2 steps.
  std::istringstream log(testutil::read_file(dir / "c1" / "loss_log.csv"));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,epoch,d_loss,g_adv,g_content,gp");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 2);

  // Flags win over the config file.
  ASSERT_EQ(run(base + " --epochs 0 --checkpoint-dir " + q(dir / "c0")).code, 0);
  EXPECT_EQ(testutil::read_file(dir / "c0" / "loss_log.csv"), "step,epoch,d_loss,g_adv,g_content,gp\n");

  const fs::path blurred = dir / "corpus" / read_manifest(dir / "corpus" / "manifest.csv")[0].blurred;
  ASSERT_EQ(run("restore --in " + q(blurred) + " --ckpt " + q(dir / "c1" / "generator.ckpt") + " --out " +
                q(dir / "r1.png")).code,
            0);
  ASSERT_EQ(run("restore --in " + q(blurred) + " --ckpt " + q(dir / "c1" / "generator.ckpt") + " --out " +
                q(dir / "r2.png")).code,
            0);
  EXPECT_EQ(testutil::read_file(dir / "r1.png"), testutil::read_file(dir / "r2.png"));
  const Image8 restored = read_png(dir / "r1.png");
  EXPECT_EQ(restored.width, 36);
  EXPECT_EQ(restored.channels, 3);

  // The untrained (epochs=0) generator starts as the identity.
  ASSERT_EQ(run("restore --in " + q(blurred) + " --ckpt " + q(dir / "c0" / "generator.ckpt") + " --out " +
                q(dir / "r0.png")).code,
            0);
  EXPECT_EQ(read_png(dir / "r0.png").pixels, to_rgb(read_png(blurred)).pixels);

  std::string ckpt = testutil::read_file(dir / "c1" / "generator.ckpt");
  ckpt[ckpt.size() - 20] ^= 0x01;
  write_text(dir / "corrupt.ckpt", ckpt);
  EXPECT_EQ(run("restore --in " + q(blurred) + " --ckpt " + q(dir / "corrupt.ckpt") + " --out " + q(dir / "x.png")).code,
            1);
  EXPECT_FALSE(fs::exists(dir / "x.png"));
}

TEST(Cli, TrainConfigErrors) {
  const auto dir = testutil::temp_dir("cli_train_err");
  const auto sharp = face_dir(dir);
  ASSERT_EQ(run("blur --in " + q(sharp) + " --seed 4 --kernel-size 5 --out " + q(dir / "corpus")).code, 0);
  const std::string pairs = " --pairs " + q(dir / "corpus" / "manifest.csv");
  write_text(dir / "tiny.cfg", kTinyConfig);
  write_text(dir / "unknown.cfg", "learning_rate=1\n");
  write_text(dir / "syntax.cfg", "no equals sign\n");
  const std::string ck = " --checkpoint-dir " + q(dir / "ck");
  EXPECT_EQ(run("train" + pairs + " --config " + q(dir / "unknown.cfg") + ck).code, 2);
  EXPECT_EQ(run("train" + pairs + " --config " + q(dir / "syntax.cfg") + ck).code, 2);
  EXPECT_EQ(run("train" + pairs + " --config " + q(dir / "tiny.cfg") + " --variant began" + ck).code, 2);
  EXPECT_EQ(run("train" + pairs + " --config " + q(dir / "tiny.cfg") + " --crop-size 16" + ck).code, 2);
  EXPECT_EQ(run("train --pairs " + q(dir / "none.csv") + " --config " + q(dir / "tiny.cfg") + ck).code, 1);
  // Crop larger than the 36 px images.
  EXPECT_EQ(run("train" + pairs + " --config " + q(dir / "tiny.cfg") + " --crop-size 40" + ck).code, 1);
}

TEST(Cli, EvalWritesReportAndTable) {
  const auto dir = testutil::temp_dir("cli_eval");
  write_text(dir / "truth.jsonl",
             "{\"id\": \"a\", \"boxes\": [[0, 0, 10, 10, 1.0], [20, 20, 10, 10, 1.0]]}\n"
             "{\"id\": \"b\", \"boxes\": [[5, 5, 10, 10, 1.0]]}\n");
  // a: one good match (IoU 0.6 after a 2.5 px shift) plus a stray; b: missed.
  write_text(dir / "restored-lsgan.jsonl",
             "{\"id\": \"a\", \"boxes\": [[2.5, 0, 10, 10, 0.9], [50, 50, 5, 5, 0.4]]}\n"
             "{\"id\": \"b\", \"boxes\": []}\n");
  write_text(dir / "sharp.jsonl", testutil::read_file(dir / "truth.jsonl"));
  const CliRun r = run("eval --truth " + q(dir / "truth.jsonl") + " --detections " + q(dir / "sharp.jsonl") + " " +
                    q(dir / "restored-lsgan.jsonl") + " --report " + q(dir / "out" / "report.csv"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(testutil::read_file(dir / "out" / "report.csv"),
            "variant,failure_rate,confidence_mean,recall,false_positives,psnr,ssim\n"
            "sharp,0.000000,1.000000,1.000000,0,,\n"
            "restored-lsgan,0.500000,0.900000,0.333333,1,,\n");
  EXPECT_EQ(testutil::read_file(dir / "out" / "report.txt"), r.out);
  EXPECT_NE(r.out.find("restored-lsgan"), std::string::npos);

  write_text(dir / "stranger.jsonl", "{\"id\": \"zzz\", \"boxes\": []}\n");
  EXPECT_EQ(run("eval --truth " + q(dir / "truth.jsonl") + " --detections " + q(dir / "stranger.jsonl") +
                " --report " + q(dir / "r.csv")).code,
            1);
  write_text(dir / "broken.jsonl", "{\"id\": \"a\", \"boxes\": [[1, 2]]}\n");
  EXPECT_EQ(run("eval --truth " + q(dir / "truth.jsonl") + " --detections " + q(dir / "broken.jsonl") +
                " --report " + q(dir / "r.csv")).code,
            1);
  EXPECT_EQ(run("eval --truth " + q(dir / "truth.jsonl") + " --report " + q(dir / "r.csv")).code, 2);
}

TEST(Cli, GradcheckPassesAndCatchesInjectedFault) {
  const CliRun ok = run("gradcheck");
  EXPECT_EQ(ok.code, 0) << ok.out;
  for (const char* name : {"layer/conv2d", "layer/instance_norm", "network/discriminator", "loss/d_lsgan",
                           "loss/content_conv", "loss/gp_input_gradient"})
    EXPECT_NE(ok.out.find(name), std::string::npos) << name;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);

  const CliRun bad = run("gradcheck --inject-fault conv2d");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL  layer/conv2d"), std::string::npos) << bad.out;
  EXPECT_EQ(run("gradcheck --inject-fault warp").code, 2);
}

TEST(Cli, DemoProducesThreeRowReport) {
  const auto dir = testutil::temp_dir("cli_demo");
  const CliRun r = run("demo --steps 3 --out " + q(dir));
  ASSERT_EQ(r.code, 0);
  std::istringstream csv(testutil::read_file(dir / "report.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[1].rfind("sharp,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("blurred,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("restored-lsgan,", 0), 0u);
  EXPECT_EQ(read_manifest(dir / "corpus" / "manifest.csv").size(), 8u);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "generator.ckpt"));
  EXPECT_EQ(run("demo --steps 3 --variant dcgan --out " + q(dir / "x")).code, 2);
}
