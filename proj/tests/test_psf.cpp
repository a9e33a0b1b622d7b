#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "deblur/psf.hpp"

using namespace deblur;

namespace {

Trajectory random_trajectory(std::uint64_t seed, int iterations = 400, double length = 12.0) {
  TrajectoryConfig c = TrajectoryConfig::defaults(iterations, length);
  c.seed = seed;
  return generate_trajectory(c);
}

}  // namespace

TEST(Rasterize, SinglePointIsDelta) {
  Trajectory t;
  t.points = {{3.7, -1.2}};
  const BlurKernel k = rasterize_kernel(t, 5, 2);
  EXPECT_EQ(k, BlurKernel::delta(5));
}

TEST(Rasterize, HalfPixelOffsetSplitsEvenly) {
  std::vector<double> grid(5 * 5, 0.0);
  deposit_bilinear(grid, 5, 2.5, 2.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i == 2 * 5 + 2 || i == 2 * 5 + 3) EXPECT_EQ(grid[i], 0.5);
    else EXPECT_EQ(grid[i], 0.0);
  }
}

TEST(Rasterize, TwoPointSegmentHandComputed) {
  // Samples at x = 0 and x = 1 (S = 1 plus the end point); centroid 0.5 puts
  // them at center -/+ 0.5, each split half/half: 0.25, 0.5, 0.25.
  Trajectory t;
  t.points = {{0, 0}, {1, 0}};
  const BlurKernel k = rasterize_kernel(t, 5, 1);
  EXPECT_DOUBLE_EQ(k.at(2, 1), 0.25);
  EXPECT_DOUBLE_EQ(k.at(2, 2), 0.5);
  EXPECT_DOUBLE_EQ(k.at(2, 3), 0.25);
  EXPECT_DOUBLE_EQ(k.sum(), 1.0);
}

TEST(Rasterize, NormalizedNonnegativeAndMassConserving) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Trajectory t = random_trajectory(seed);
    const int size = fitting_kernel_size(t, 9);
    const auto raw = deposit_trajectory(t, size, 2);
    double mass = 0.0;
    for (double w : raw) mass += w;
    const double samples = static_cast<double>(sample_count(t, 2));
    EXPECT_NEAR(mass, samples, 1e-9 * samples);

    const BlurKernel k = rasterize_kernel(t, size, 2);
    EXPECT_NEAR(k.sum(), 1.0, 1e-6);
    EXPECT_TRUE(std::all_of(k.weights.begin(), k.weights.end(), [](double w) { return w >= 0.0; }));
    EXPECT_NO_THROW(k.validate());
  }
}

TEST(Rasterize, TranslationInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Trajectory t = random_trajectory(seed);
    const int size = fitting_kernel_size(t, 9);
    const BlurKernel k = rasterize_kernel(t, size, 2);
    EXPECT_EQ(rasterize_kernel(translate(t, {17.0, -5.0}), size, 2), k);
    EXPECT_EQ(rasterize_kernel(translate(t, {0.375, 2.125}), size, 2), k);
  }
}

TEST(Rasterize, OverflowAndBadArguments) {
  Trajectory t;
  t.points = {{0, 0}, {10, 0}};
  EXPECT_THROW(rasterize_kernel(t, 7, 2), KernelOverflowError);
  EXPECT_NO_THROW(rasterize_kernel(t, fitting_kernel_size(t), 2));
  EXPECT_THROW(rasterize_kernel(Trajectory{}, 7, 2), ConfigError);
  EXPECT_THROW(rasterize_kernel(t, 12, 2), ConfigError);
}

TEST(KernelImage, DeltaIsSingleWhitePixel) {
  const Image8 img = kernel_to_image(BlurKernel::delta(3));
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_EQ(img.at(y, x), (y == 1 && x == 1) ? 255 : 0);
}

TEST(KernelImage, UniformIsAllZero) {
  BlurKernel k;
  k.size = 3;
  k.weights.assign(9, 1.0 / 9.0);
  const Image8 img = kernel_to_image(k);
  EXPECT_TRUE(std::all_of(img.pixels.begin(), img.pixels.end(), [](auto v) { return v == 0; }));
}

TEST(KernelImage, ArgmaxIsBrightest) {
  const Trajectory t = random_trajectory(9);
  const BlurKernel k = rasterize_kernel(t, fitting_kernel_size(t), 2);
  const Image8 img = kernel_to_image(k);
  std::size_t arg = 0;
  for (std::size_t i = 1; i < k.weights.size(); ++i)
    if (k.weights[i] > k.weights[arg]) arg = i;
  EXPECT_EQ(img.pixels[arg], 255);
  EXPECT_EQ(*std::max_element(img.pixels.begin(), img.pixels.end()), 255);
}

TEST(Psf1, FormatAndRoundTrip) {
  EXPECT_EQ(psf1_string(BlurKernel::delta(3)), "PSF1 3\n0 0 0\n0 1 0\n0 0 0\n");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Trajectory t = random_trajectory(seed);
    const BlurKernel k = rasterize_kernel(t, fitting_kernel_size(t), 2);
    const std::string first = psf1_string(k);
    std::istringstream is(first);
    EXPECT_EQ(psf1_string(read_psf1(is)), first);
  }
}

TEST(Psf1, RejectsMalformed) {
  auto parse = [](const std::string& s) {
    std::istringstream is(s);
    return read_psf1(is);
  };
  EXPECT_THROW(parse("PSF2 1\n1\n"), FormatError);
  EXPECT_THROW(parse("PSF1 2\n0.25 0.25\n0.25 0.25\n"), FormatError);
  EXPECT_THROW(parse("PSF1 1\n0.5\n"), FormatError);
  EXPECT_THROW(parse("PSF1 3\n0 0 0\n0 1 0\n"), FormatError);
  EXPECT_THROW(parse("PSF1 1\nabc\n"), FormatError);
  EXPECT_THROW(parse("PSF1 1\n-1\n"), FormatError);
}
