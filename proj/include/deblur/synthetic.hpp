#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "deblur/image.hpp"
#include "deblur/rng.hpp"

namespace deblur {

/// A small seeded face-like test card: shaded background, skin-tone ellipse,
/// two eyes, brows and a mouth. Sharp edges everywhere, so blur is visible.
inline Image8 synthetic_face(int size, std::uint64_t seed, int channels = 3) {
  Rng rng(seed);
  const double s = size;
  auto jitter = [&](double v, double amount) { return v + rng.uniform(-amount, amount); };

  const double bg[3] = {rng.uniform(20, 120), rng.uniform(40, 160), rng.uniform(60, 200)};
  const double skin[3] = {rng.uniform(170, 240), rng.uniform(120, 190), rng.uniform(90, 150)};
  const double cx = jitter(0.5 * s, 0.06 * s), cy = jitter(0.52 * s, 0.06 * s);
  const double rx = jitter(0.30 * s, 0.04 * s), ry = jitter(0.38 * s, 0.04 * s);
  const double eye_dx = jitter(0.12 * s, 0.02 * s), eye_y = cy - jitter(0.10 * s, 0.02 * s);
  const double eye_r = std::max(1.0, jitter(0.05 * s, 0.01 * s));
  const double mouth_y = cy + jitter(0.17 * s, 0.03 * s), mouth_w = jitter(0.12 * s, 0.03 * s);
  const double mouth_h = std::max(1.0, 0.03 * s);
  const double tilt = rng.uniform(-0.3, 0.3);

  Image8 img(size, size, channels);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = bg[c] * (0.7 + 0.6 * py / s);
      const double ex = (px - cx) / rx, ey = (py - cy) / ry;
      if (ex * ex + ey * ey <= 1.0) {
        for (int c = 0; c < 3; ++c) rgb[c] = skin[c] * (1.05 - 0.25 * std::abs(ex));
        for (int side : {-1, 1}) {
          const double dx = px - (cx + side * eye_dx), dy = py - (eye_y + side * tilt);
          if (dx * dx + dy * dy <= eye_r * eye_r)
            for (double& v : rgb) v = 25;
          if (std::abs(dx) <= 1.6 * eye_r && dy >= -2.6 * eye_r && dy <= -1.6 * eye_r)
            for (double& v : rgb) v *= 0.35;
        }
        if (std::abs(px - cx) <= mouth_w && std::abs(py - mouth_y) <= mouth_h) {
          rgb[0] = 150;
          rgb[1] = 40;
          rgb[2] = 50;
        }
      }
      if (channels == 1) {
        img.at(y, x) = static_cast<std::uint8_t>(std::clamp(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2], 0.0, 255.0));
      } else {
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(rgb[c], 0.0, 255.0));
      }
    }
  }
  return img;
}

}  // namespace deblur
