#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/tensor.hpp"

namespace deblur {

/// Interleaved 8-bit image (1 = gray, 3 = RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

/// v / 127.5 - 1
inline double byte_to_signed(std::uint8_t v) noexcept { return v / 127.5 - 1.0; }

/// Clamp to [-1, 1], invert the byte map, round half up.
inline std::uint8_t signed_to_byte(double v) noexcept {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::floor((c + 1.0) * 127.5 + 0.5));
}

/// Image8 -> (1, C, H, W) tensor in [-1, 1].
template <typename T = double>
Tensor<T> to_tensor(const Image8& img) {
  Tensor<T> t(1, img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(0, c, y, x) = static_cast<T>(byte_to_signed(img.at(y, x, c)));
  return t;
}

/// Batch item `b` of a tensor -> Image8 (channels must be 1 or 3).
template <typename T>
Image8 to_image(const Tensor<T>& t, int b = 0) {
  if (t.channels() != 1 && t.channels() != 3)
    throw DimensionError("to_image: need 1 or 3 channels, got " + std::to_string(t.channels()));
  Image8 img(t.width(), t.height(), t.channels());
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x)
        img.at(y, x, c) = signed_to_byte(static_cast<double>(t.at(b, c, y, x)));
  return img;
}

/// Gray -> RGB by replication; RGB passes through.
inline Image8 to_rgb(const Image8& img) {
  if (img.channels == 3) return img;
  Image8 out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = img.pixels[i];
  return out;
}

}  // namespace deblur
