#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/image.hpp"
#include "deblur/png_io.hpp"
#include "deblur/psf.hpp"
#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"
#include "deblur/trajectory.hpp"

namespace deblur {

enum class Padding { reflect, zero };

/// Mirror index without repeating the edge sample (… 2 1 | 0 1 2 … n-1 | n-2 …).
inline int reflect_index(int i, int n) noexcept {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i >= n ? period - i : i;
}

/// Per-channel 2-D convolution (kernel flipped), same-size output.
template <typename T>
Tensor<T> convolve(const Tensor<T>& image, const BlurKernel& kernel,
                   Padding padding = Padding::reflect) {
  const int H = image.height(), W = image.width(), K = kernel.size, r = kernel.radius();
  if (K > std::min(H, W))
    throw DimensionError("convolve: kernel " + std::to_string(K) + " larger than image " +
                         std::to_string(H) + "x" + std::to_string(W));
  Tensor<T> out(image.shape());
  for (int b = 0; b < image.batch(); ++b) {
    for (int c = 0; c < image.channels(); ++c) {
      auto src = image.plane(b, c);
      auto dst = out.plane(b, c);
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          double acc = 0.0;
          for (int i = 0; i < K; ++i) {
            int sy = y + r - i;
            if (sy < 0 || sy >= H) {
              if (padding == Padding::zero) continue;
              sy = reflect_index(sy, H);
            }
            for (int j = 0; j < K; ++j) {
              const double w = kernel.at(i, j);
              if (w == 0.0) continue;
              int sx = x + r - j;
              if (sx < 0 || sx >= W) {
                if (padding == Padding::zero) continue;
                sx = reflect_index(sx, W);
              }
              acc += w * static_cast<double>(src[static_cast<std::size_t>(sy) * W + sx]);
            }
          }
          dst[static_cast<std::size_t>(y) * W + x] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

/// image + N(0, noise_std^2) per element, clamped to [-1, 1].
template <typename T>
Tensor<T> add_noise(const Tensor<T>& image, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0)) throw ConfigError("add_noise: noise_std must be >= 0");
  if (noise_std == 0.0) return image;
  Tensor<T> out(image.shape());
  Rng rng(seed);
  for (std::size_t i = 0; i < image.size(); ++i)
    out[i] = static_cast<T>(std::clamp(static_cast<double>(image[i]) + noise_std * rng.normal(), -1.0, 1.0));
  return out;
}

struct DegradationConfig {
  double noise_std = 0.01;
  std::uint64_t seed = 0;
  /// Minimum kernel raster size; enlarged per image when the trajectory needs more room.
  int kernel_size = 31;
  int samples_per_segment = 2;
  Padding padding = Padding::reflect;
  /// When set, every image uses this kernel instead of a fresh trajectory.
  std::optional<BlurKernel> fixed_kernel;

  void validate() const {
    if (!(noise_std >= 0.0)) throw ConfigError("degradation: noise_std must be >= 0");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw ConfigError("degradation: kernel_size must be odd and positive");
    if (samples_per_segment < 1) throw ConfigError("degradation: samples_per_segment must be >= 1");
  }
};

struct ManifestRow {
  std::string input;    // sharp image
  std::string blurred;
  std::string kernel;
  std::uint64_t seed = 0;
  bool operator==(const ManifestRow&) const = default;
};

inline constexpr const char* kManifestHeader = "input,blurred,kernel,seed";

inline void write_manifest(std::ostream& os, const std::vector<ManifestRow>& rows) {
  os << kManifestHeader << '\n';
  for (const auto& r : rows) os << r.input << ',' << r.blurred << ',' << r.kernel << ',' << r.seed << '\n';
}

inline std::vector<ManifestRow> read_manifest(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader)
    throw FormatError(std::string("manifest: expected header \"") + kManifestHeader + "\"");
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError("manifest line " + std::to_string(lineno) + ": expected 4 fields");
    ManifestRow r{f[0], f[1], f[2], 0};
    try {
      std::size_t used = 0;
      r.seed = std::stoull(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("seed");
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad seed");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open manifest " + path.string());
  return read_manifest(is);
}

/// Per-image seeds are hashed from the corpus seed and the file name, so
/// output does not depend on processing order.
inline std::uint64_t image_seed(std::uint64_t corpus_seed, const std::string& filename) {
  return derive_seed(corpus_seed, filename);
}

/// The kernel blur_corpus uses for an image of the given size and seed.
inline BlurKernel corpus_kernel(const TrajectoryConfig& traj_config, const DegradationConfig& cfg,
                                std::uint64_t seed) {
  if (cfg.fixed_kernel) return *cfg.fixed_kernel;
  TrajectoryConfig tc = traj_config;
  tc.seed = derive_seed(seed, "trajectory");
  const Trajectory traj = generate_trajectory(tc);
  const int size = fitting_kernel_size(traj, cfg.kernel_size);
  return rasterize_kernel(traj, size, cfg.samples_per_segment);
}

/// Full degradation of one decoded image: kernel, blur, noise.
template <typename T = double>
Tensor<T> degrade(const Tensor<T>& sharp, const BlurKernel& kernel, const DegradationConfig& cfg,
                  std::uint64_t seed) {
  return add_noise(convolve(sharp, kernel, cfg.padding), cfg.noise_std, derive_seed(seed, "noise"));
}

namespace detail {
inline std::string relative_to(const std::filesystem::path& p, const std::filesystem::path& base) {
  namespace fs = std::filesystem;
  const fs::path rel = fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal());
  return (rel.empty() ? p : rel).generic_string();
}
}  // namespace detail

/// Blurs every decodable image in `input_dir` (sorted by name) into
/// `output_dir`/blurred, writes each kernel to `output_dir`/kernels as PSF1
/// and returns the manifest rows (also written to `output_dir`/manifest.csv).
/// Manifest paths are relative to `output_dir`.
inline std::vector<ManifestRow> blur_corpus(const std::filesystem::path& input_dir,
                                            const std::filesystem::path& output_dir,
                                            const TrajectoryConfig& traj_config,
                                            const DegradationConfig& cfg,
                                            std::ostream& log = std::cerr) {
  namespace fs = std::filesystem;
  cfg.validate();
  traj_config.validate();
  if (!fs::is_directory(input_dir)) throw ConfigError("blur: not a directory: " + input_dir.string());

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  if (files.empty()) throw ConfigError("blur: no input files in " + input_dir.string());
  std::sort(files.begin(), files.end());

  fs::create_directories(output_dir / "blurred");
  fs::create_directories(output_dir / "kernels");

  std::vector<ManifestRow> rows;
  for (const fs::path& file : files) {
    Image8 img;
    try {
      img = read_png(file);
    } catch (const FormatError& e) {
      log << "warning: skipping " << file.string() << ": " << e.what() << '\n';
      continue;
    }
    const std::string name = file.filename().string();
    if (name.find(',') != std::string::npos) {
      log << "warning: skipping " << file.string() << ": comma in file name\n";
      continue;
    }
    const std::uint64_t seed = image_seed(cfg.seed, name);
    const BlurKernel kernel = corpus_kernel(traj_config, cfg, seed);
    if (kernel.size > std::min(img.width, img.height)) {
      log << "warning: skipping " << file.string() << ": kernel " << kernel.size
          << " larger than image\n";
      continue;
    }
    const Tensor<double> blurred = degrade(to_tensor<double>(img), kernel, cfg, seed);

    const std::string stem = file.stem().string();
    const fs::path blurred_path = output_dir / "blurred" / (stem + ".png");
    const fs::path kernel_path = output_dir / "kernels" / (stem + ".psf");
    write_png(blurred_path, to_image(blurred));
    {
      std::ofstream os(kernel_path, std::ios::binary);
      write_psf1(os, kernel);
    }
    rows.push_back({detail::relative_to(file, output_dir), detail::relative_to(blurred_path, output_dir),
                    detail::relative_to(kernel_path, output_dir), seed});
  }

  std::ofstream os(output_dir / "manifest.csv", std::ios::binary);
  write_manifest(os, rows);
  return rows;
}

}  // namespace deblur
