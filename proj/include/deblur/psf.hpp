#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/image.hpp"
#include "deblur/trajectory.hpp"

namespace deblur {

/// Discrete point-spread function: odd size K, K*K row-major nonnegative
/// weights summing to one.
struct BlurKernel {
  int size = 1;
  std::vector<double> weights{1.0};

  double& at(int y, int x) { return weights[static_cast<std::size_t>(y) * size + x]; }
  double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * size + x]; }
  int radius() const noexcept { return size / 2; }

  double sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  static BlurKernel delta(int size) {
    BlurKernel k;
    k.size = size;
    k.weights.assign(static_cast<std::size_t>(size) * size, 0.0);
    k.at(size / 2, size / 2) = 1.0;
    return k;
  }

  void validate(double tol = 1e-6) const {
    if (size < 1 || size % 2 == 0) throw FormatError("kernel size must be odd and positive");
    if (weights.size() != static_cast<std::size_t>(size) * size)
      throw FormatError("kernel weight count does not match size");
    for (double w : weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw FormatError("kernel weights must be finite and >= 0");
    if (std::abs(sum() - 1.0) > tol) throw FormatError("kernel weights must sum to 1");
  }

  bool operator==(const BlurKernel&) const = default;
};

/// Centered sub-pixel positions are snapped to this grid before deposition,
/// which makes the raster independent of rounding noise from translating
/// the trajectory.
inline constexpr double kSubpixelGrid = 1.0 / 4096.0;

/// Adds unit mass at continuous raster position (ux, uy) (pixel centers at
/// integer coordinates) split over the four neighbouring pixels.
inline void deposit_bilinear(std::vector<double>& grid, int size, double ux, double uy) {
  if (!(ux >= 0.0 && ux <= size - 1.0 && uy >= 0.0 && uy <= size - 1.0))
    throw KernelOverflowError("trajectory does not fit a " + std::to_string(size) + "x" +
                              std::to_string(size) + " kernel; enlarge the kernel size");
  const int x0 = std::min(static_cast<int>(std::floor(ux)), std::max(size - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(uy)), std::max(size - 2, 0));
  const double fx = ux - x0;
  const double fy = uy - y0;
  auto add = [&](int y, int x, double w) {
    if (w != 0.0) grid[static_cast<std::size_t>(y) * size + x] += w;
  };
  add(y0, x0, (1.0 - fx) * (1.0 - fy));
  if (size > 1) {
    add(y0, x0 + 1, fx * (1.0 - fy));
    add(y0 + 1, x0, (1.0 - fx) * fy);
    add(y0 + 1, x0 + 1, fx * fy);
  }
}

/// Unnormalized raster: each continuous sample deposits unit mass onto its
/// four neighbouring pixels with bilinear weights. Samples are taken
/// `samples_per_segment` times along each segment plus once at the final
/// point, after moving the point centroid onto the kernel center.
/// Returns the raw K*K mass grid; its total equals the number of samples.
inline std::vector<double> deposit_trajectory(const Trajectory& traj, int size,
                                              int samples_per_segment) {
  if (traj.points.empty()) throw ConfigError("rasterize: empty trajectory");
  if (size < 1 || size % 2 == 0) throw ConfigError("rasterize: kernel size must be odd and positive");
  if (samples_per_segment < 1) throw ConfigError("rasterize: samples_per_segment must be >= 1");

  Vec2 centroid{};
  for (const Vec2& p : traj.points) centroid += p;
  centroid = (1.0 / static_cast<double>(traj.points.size())) * centroid;

  const double center = size / 2;
  std::vector<double> grid(static_cast<std::size_t>(size) * size, 0.0);

  auto deposit = [&](Vec2 sample) {
    const double ux = center + std::round((sample.x - centroid.x) / kSubpixelGrid) * kSubpixelGrid;
    const double uy = center + std::round((sample.y - centroid.y) / kSubpixelGrid) * kSubpixelGrid;
    deposit_bilinear(grid, size, ux, uy);
  };

  const auto& pts = traj.points;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Vec2 step = pts[i + 1] - pts[i];
    for (int j = 0; j < samples_per_segment; ++j)
      deposit(pts[i] + (static_cast<double>(j) / samples_per_segment) * step);
  }
  deposit(pts.back());
  return grid;
}

/// Number of samples deposit_trajectory places for a trajectory.
inline std::size_t sample_count(const Trajectory& traj, int samples_per_segment) {
  return traj.points.empty() ? 0 : (traj.points.size() - 1) * samples_per_segment + 1;
}

inline BlurKernel rasterize_kernel(const Trajectory& traj, int size, int samples_per_segment = 2) {
  BlurKernel k;
  k.size = size;
  k.weights = deposit_trajectory(traj, size, samples_per_segment);
  const double total = k.sum();
  for (double& w : k.weights) w /= total;
  return k;
}

/// Smallest odd kernel size (>= min_size) that holds the centered trajectory.
inline int fitting_kernel_size(const Trajectory& traj, int min_size = 1) {
  if (traj.points.empty()) throw ConfigError("fitting_kernel_size: empty trajectory");
  Vec2 centroid{};
  for (const Vec2& p : traj.points) centroid += p;
  centroid = (1.0 / static_cast<double>(traj.points.size())) * centroid;
  double reach = 0.0;
  for (const Vec2& p : traj.points)
    reach = std::max({reach, std::abs(p.x - centroid.x), std::abs(p.y - centroid.y)});
  // One pixel of slack for the sub-pixel snap.
  int size = 2 * (static_cast<int>(std::ceil(reach)) + 1) + 1;
  size = std::max(size, min_size);
  if (size % 2 == 0) ++size;
  return size;
}

/// Min-max scales the weights to 8-bit gray. A constant kernel maps to all zeros.
inline Image8 kernel_to_image(const BlurKernel& k) {
  Image8 img(k.size, k.size, 1);
  const auto [lo, hi] = std::minmax_element(k.weights.begin(), k.weights.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return img;
  for (std::size_t i = 0; i < k.weights.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::floor(255.0 * (k.weights[i] - *lo) / range + 0.5));
  return img;
}

/// PSF1 text format: "PSF1 K", then K rows of K space-separated weights
/// printed with 9 significant digits.
inline void write_psf1(std::ostream& os, const BlurKernel& k) {
  os << "PSF1 " << k.size << '\n';
  char buf[40];
  for (int y = 0; y < k.size; ++y) {
    for (int x = 0; x < k.size; ++x) {
      std::snprintf(buf, sizeof buf, "%.9g", k.at(y, x));
      if (x) os << ' ';
      os << buf;
    }
    os << '\n';
  }
}

inline std::string psf1_string(const BlurKernel& k) {
  std::ostringstream os;
  write_psf1(os, k);
  return os.str();
}

inline BlurKernel read_psf1(std::istream& is) {
  std::string magic;
  int size = 0;
  if (!(is >> magic >> size) || magic != "PSF1") throw FormatError("PSF1: bad header");
  if (size < 1 || size % 2 == 0) throw FormatError("PSF1: size must be odd and positive");
  BlurKernel k;
  k.size = size;
  k.weights.assign(static_cast<std::size_t>(size) * size, 0.0);
  for (double& w : k.weights) {
    std::string tok;
    if (!(is >> tok)) throw FormatError("PSF1: truncated weights");
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, w);
    if (ec != std::errc{} || ptr != end) throw FormatError("PSF1: bad number '" + tok + "'");
  }
  std::string extra;
  if (is >> extra) throw FormatError("PSF1: trailing data");
  k.validate();
  return k;
}

}  // namespace deblur
