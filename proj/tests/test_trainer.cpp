#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "deblur/synthetic.hpp"
#include "deblur/trainer.hpp"
#include "test_util.hpp"

using namespace deblur;
using namespace deblur::train;
namespace fs = std::filesystem;

namespace {

/// Synthetic 20x20 pairs, blurred with a fixed 3x3 box kernel.
PairDataset tiny_dataset(int n = 4, int size = 36) {
  PairDataset ds;
  BlurKernel box{3, std::vector<double>(9, 1.0 / 9.0)};
  for (int i = 0; i < n; ++i) {
    const Tensor<float> sharp = to_tensor<float>(synthetic_face(size, 100 + i));
    ds.add(convolve(sharp, box, Padding::reflect), sharp, "face" + std::to_string(i));
  }
  return ds;
}

TrainConfig tiny_config(const std::string& variant) {
  TrainConfig c;
  c.variant = losses::GanVariant::parse(variant);
  c.epochs = 2;
  c.batch_size = 2;
  c.crop_size = 32;
  c.base_channels = 2;
  c.res_blocks = 1;
  c.d_base_channels = 2;
  c.lr_g = c.lr_d = 1e-3;
  c.content.extractor_channels = 2;
  c.seed = 11;
  return c;
}

std::vector<std::vector<float>> snapshot(const nn::Network<float>& net) {
  std::vector<std::vector<float>> v;
  for (const auto* p : net.params()) v.push_back(p->value);
  return v;
}

}  // namespace

TEST(TrainConfig, ValidationAndKeys) {
  TrainConfig c;
  c.crop_size = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c.crop_size = 32;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);

  TrainConfig d;
  d.apply({{"variant", "wgan-gp"}, {"epochs", "3"}, {"gp_lambda", "5"}, {"content_weight", "7"},
           {"content_extractor", "identity"}, {"flip", "false"}, {"seed", "99"}});
  EXPECT_EQ(d.variant.kind, losses::GanKind::wgan_gp);
  EXPECT_EQ(d.variant.gp_lambda, 5.0);
  EXPECT_EQ(d.epochs, 3);
  EXPECT_EQ(d.content.weight, 7.0);
  EXPECT_EQ(d.content.extractor, losses::Extractor::identity);
  EXPECT_FALSE(d.flip);
  EXPECT_EQ(d.seed, 99u);
  EXPECT_EQ(d.effective_d_steps(), 5);
  d.apply({{"variant", "gan"}});
  EXPECT_EQ(d.effective_d_steps(), 1);
  EXPECT_EQ(d.variant.gp_lambda, 5.0);  // variant change keeps tuned constants
  EXPECT_THROW(d.apply({{"learning_rate", "1"}}), ConfigError);
  EXPECT_THROW(d.apply({{"epochs", "two"}}), ConfigError);
}

TEST(Trainer, ZeroEpochsKeepsInitialParameters) {
  const auto ds = tiny_dataset();
  const auto dir = testutil::temp_dir("train_zero");
  TrainConfig c = tiny_config("lsgan");
  c.epochs = 0;
  c.checkpoint_dir = (dir / "ckpt").string();
  c.log_path = (dir / "log.csv").string();
  Trainer t(ds, c);
  const auto before = snapshot(t.generator());
  const TrainResult r = t.run();
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(snapshot(r.generator), before);
  EXPECT_EQ(testutil::read_file(dir / "log.csv"), std::string(kLossLogHeader) + "\n");
  const auto loaded = nn::load_checkpoint<float>(dir / "ckpt" / "generator.ckpt");
  EXPECT_EQ(snapshot(loaded), before);
}

TEST(Trainer, DeterministicLogsAndCheckpoints) {
  const auto ds = tiny_dataset();
  std::string logs[2], ckpts[2];
  for (int run = 0; run < 2; ++run) {
    const auto dir = testutil::temp_dir("train_det" + std::to_string(run));
    TrainConfig c = tiny_config("wgan-gp");
    c.epochs = 1;
    c.checkpoint_dir = (dir / "ckpt").string();
    c.log_path = (dir / "log.csv").string();
    train::train(ds, c);
    logs[run] = testutil::read_file(dir / "log.csv");
    ckpts[run] = testutil::read_file(dir / "ckpt" / "generator.ckpt");
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(ckpts[0], ckpts[1]);

  TrainConfig other = tiny_config("wgan-gp");
  other.epochs = 1;
  other.seed = 12;
  std::ostringstream a, b;
  for (const auto& row : train::train(ds, other).log) write_loss_row(a, row);
  std::istringstream first(logs[0]);
  std::string header;
  std::getline(first, header);
  b << first.rdbuf();
  EXPECT_NE(a.str(), b.str());
}

TEST(Trainer, LogRowsMatchStepsAndAreFinite) {
  const auto ds = tiny_dataset(5);
  const auto dir = testutil::temp_dir("train_log");
  TrainConfig c = tiny_config("gan");
  c.epochs = 3;  // 5 pairs at batch 2 -> 3 steps per epoch
  c.log_path = (dir / "log.csv").string();
  const auto r = train::train(ds, c);
  ASSERT_EQ(r.log.size(), 9u);
  std::ifstream is(dir / "log.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,epoch,d_loss,g_adv,g_content,gp");
  long rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::istringstream ls(line);
    std::string cell;
    int col = 0;
    while (std::getline(ls, cell, ',')) {
      EXPECT_TRUE(std::isfinite(std::stod(cell))) << line;
      ++col;
    }
    EXPECT_EQ(col, 6);
  }
  EXPECT_EQ(rows, 9);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, static_cast<long>(i) + 1);
    EXPECT_EQ(r.log[i].epoch, static_cast<int>(i / 3));
    EXPECT_EQ(r.log[i].gp, 0.0);
  }

  TrainConfig capped = c;
  capped.log_path.clear();
  capped.max_steps = 4;
  EXPECT_EQ(train::train(ds, capped).log.size(), 4u);
}

TEST(Trainer, DiscriminatorSeesSharpAsRealAndRestoredAsFake) {
  const auto ds = tiny_dataset();
  for (const char* variant : {"gan", "lsgan", "wgan-gp"}) {
    TrainConfig c = tiny_config(variant);
    c.epochs = 1;
    Trainer t(ds, c);
    int calls = 0;
    t.set_audit([&](const DStepAudit& a) {
      ++calls;
      const int B = a.real_count;
      ASSERT_EQ(a.d_input.batch(), 2 * B);
      ASSERT_EQ(a.real_scores.size(), static_cast<std::size_t>(B));
      ASSERT_EQ(a.fake_scores.size(), static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const auto real = a.d_input.item(b), fake = a.d_input.item(B + b);
        const auto sharp = a.sharp_batch.item(b), restored = a.restored_batch.item(b);
        EXPECT_TRUE(std::equal(real.begin(), real.end(), sharp.begin()));
        EXPECT_TRUE(std::equal(fake.begin(), fake.end(), restored.begin()));
      }
      // The restored batch is the current generator applied to the blurred batch.
      nn::Network<float> g = t.generator();
      const Tensor<float> again = g.forward(a.blurred_batch);
      EXPECT_EQ(again.storage(), a.restored_batch.storage());
      EXPECT_NE(a.sharp_batch.storage(), a.blurred_batch.storage());
      // Scores are D's raw outputs on those halves, in order.
      nn::Network<float> d = a.discriminator;
      const auto scores = losses::scores(d.forward(a.d_input));
      for (int b = 0; b < B; ++b) {
        EXPECT_EQ(scores[b], a.real_scores[b]);
        EXPECT_EQ(scores[B + b], a.fake_scores[b]);
      }
    });
    t.run();
    EXPECT_EQ(calls, 2 * c.effective_d_steps()) << variant;
  }
}

TEST(Trainer, WganClipsAfterEveryUpdate) {
  const auto ds = tiny_dataset();
  TrainConfig c = tiny_config("wgan");
  c.init_std = 0.5;  // start far outside the clip box
  c.lr_d = 0.05;
  Trainer t(ds, c);
  int checked = 0;
  t.set_audit([&](const DStepAudit& a) {
    if (a.step == 1 && a.d_iteration == 0) return;  // before the first update
    ++checked;
    for (const auto* p : a.discriminator.params())
      for (float v : p->value) ASSERT_LE(std::abs(v), static_cast<float>(c.variant.clip_c));
  });
  const auto r = t.run();
  EXPECT_GT(checked, 0);
  for (const auto* p : r.discriminator.params())
    for (float v : p->value) EXPECT_LE(std::abs(v), static_cast<float>(c.variant.clip_c));
}

TEST(Trainer, NonFiniteLossNamesTheStep) {
  PairDataset ds = tiny_dataset(2);
  for (float& v : ds.blurred[1].storage()) v = std::nanf("");
  TrainConfig c = tiny_config("lsgan");
  c.batch_size = 1;
  c.flip = false;
  try {
    train::train(ds, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("at step"), std::string::npos) << e.what();
  }
}

TEST(Trainer, RejectsBadData) {
  PairDataset empty;
  EXPECT_THROW(Trainer(empty, tiny_config("gan")), ConfigError);
  TrainConfig big = tiny_config("gan");
  big.crop_size = 40;
  const auto ds = tiny_dataset();
  EXPECT_THROW(Trainer(ds, big), DimensionError);
  TrainConfig small = tiny_config("gan");
  small.crop_size = 28;  // last instance norm would see 1x1
  EXPECT_THROW(Trainer(ds, small), ConfigError);
  small.crop_size = 12;
  EXPECT_THROW(Trainer(ds, small), ConfigError);
  PairDataset mismatch;
  EXPECT_THROW(mismatch.add(Tensor<float>(1, 3, 8, 8), Tensor<float>(1, 3, 8, 12), "x"), DimensionError);
}

TEST(Dataset, ManifestLoadingAndDecodeErrors) {
  const auto dir = testutil::temp_dir("dataset");
  fs::create_directories(dir / "in");
  write_png(dir / "in" / "a.png", synthetic_face(16, 1));
  write_png(dir / "in" / "b.png", synthetic_face(16, 2));
  DegradationConfig dc;
  dc.kernel_size = 3;
  dc.seed = 4;
  std::ostringstream quiet;
  blur_corpus(dir / "in", dir / "out", TrajectoryConfig::defaults(100, 4.0), dc, quiet);
  const auto ds = PairDataset::from_manifest(dir / "out" / "manifest.csv");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.sharp[0].shape(), (Shape{1, 3, 16, 16}));

  std::ofstream(dir / "out" / "blurred" / "b.png", std::ios::binary) << "garbage";
  try {
    PairDataset::from_manifest(dir / "out" / "manifest.csv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("b.png"), std::string::npos) << e.what();
  }
}

TEST(Restore, ZeroGeneratorIsIdentityAndRepeatable) {
  const auto dir = testutil::temp_dir("restore");
  nn::Network<float> g = nn::build_generator<float>(2, 1, 3);
  nn::zero_weights(g);
  nn::save_checkpoint(dir / "g.ckpt", g);
  const Image8 in = synthetic_face(18, 5);  // not a multiple of 4: pad and crop back
  write_png(dir / "in.png", in);
  const std::string ckpt_before = testutil::read_file(dir / "g.ckpt");

  restore(dir / "in.png", dir / "g.ckpt", dir / "out1.png");
  restore(dir / "in.png", dir / "g.ckpt", dir / "out2.png");
  EXPECT_EQ(read_png(dir / "out1.png"), in);
  EXPECT_EQ(testutil::read_file(dir / "out1.png"), testutil::read_file(dir / "out2.png"));
  EXPECT_EQ(testutil::read_file(dir / "g.ckpt"), ckpt_before);
}

TEST(Restore, TrainedGeneratorIsPureAndDeterministic) {
  nn::Network<float> g = nn::build_generator<float>(2, 1, 3);
  nn::initialize(g, 3, 0.2);
  const auto x = testutil::random_tensor({1, 3, 10, 14}, 4).cast<float>();
  const auto before = snapshot(g);
  const auto a = restore_tensor(g, x), b = restore_tensor(g, x);
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_EQ(a.storage(), b.storage());
  EXPECT_EQ(snapshot(g), before);
}

TEST(Restore, CorruptCheckpointRejected) {
  const auto dir = testutil::temp_dir("restore_bad");
  nn::Network<float> g = nn::build_generator<float>(2, 1, 3);
  nn::initialize(g, 1);
  nn::save_checkpoint(dir / "g.ckpt", g);
  std::string bytes = testutil::read_file(dir / "g.ckpt");
  bytes[bytes.size() - 30] ^= 0x40;
  std::ofstream(dir / "g.ckpt", std::ios::binary) << bytes;
  write_png(dir / "in.png", synthetic_face(16, 1));
  EXPECT_THROW(restore(dir / "in.png", dir / "g.ckpt", dir / "out.png"), CorruptCheckpointError);
  EXPECT_FALSE(fs::exists(dir / "out.png"));
}
