#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/rng.hpp"

namespace deblur {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2& operator+=(Vec2 o) noexcept { x += o.x; y += o.y; return *this; }
  friend Vec2 operator+(Vec2 a, Vec2 b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 v) noexcept { return {s * v.x, s * v.y}; }
  double norm() const noexcept { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

/// Parameters of the camera-shake random walk. Scales are in pixels.
struct TrajectoryConfig {
  int iterations = 2000;
  double max_length = 60.0;
  double gaussian_std = 0.3;
  double impulse_prob = 0.005;
  double impulse_scale = 3.0;
  double inertia = 0.7;
  double centripetal_gain = 0.3 / 2000.0;
  std::uint64_t seed = 0;
  /// When unset, a random unit direction scaled by max_length / iterations.
  std::optional<Vec2> initial_velocity;

  /// Defaults scaled to an iteration count: centripetal gain 0.3 / iterations,
  /// impulse scale 10 x gaussian_std.
  static TrajectoryConfig defaults(int iterations = 2000, double max_length = 60.0) {
    TrajectoryConfig c;
    c.iterations = iterations;
    c.max_length = max_length;
    c.centripetal_gain = iterations > 0 ? 0.3 / iterations : 0.0;
    c.impulse_scale = 10.0 * c.gaussian_std;
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw ConfigError("trajectory: " + m); };
    if (iterations < 1) bad("iterations must be >= 1");
    if (!(max_length > 0.0) || !std::isfinite(max_length)) bad("max_length must be > 0");
    if (!(gaussian_std >= 0.0)) bad("gaussian_std must be >= 0");
    if (!(impulse_prob >= 0.0 && impulse_prob <= 1.0)) bad("impulse_prob must be in [0,1]");
    if (!(impulse_scale >= 0.0)) bad("impulse_scale must be >= 0");
    if (!(inertia >= 0.0 && inertia <= 1.0)) bad("inertia must be in [0,1]");
    if (!(centripetal_gain >= 0.0)) bad("centripetal_gain must be >= 0");
  }

  /// Per-step speed cap: twice the nominal step length.
  double max_step() const noexcept { return 2.0 * max_length / iterations; }
};

struct Trajectory {
  std::vector<Vec2> points;
  std::vector<Vec2> velocities;
  /// Number of steps where an impulse perturbation fired.
  int impulse_count = 0;

  std::size_t size() const noexcept { return points.size(); }

  double arc_length() const noexcept {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) total += (points[i] - points[i - 1]).norm();
    return total;
  }
};

/// Simulates the camera path. Per step t:
///   v[t+1] = inertia * v[t] + N(0, gaussian_std^2 I) + impulse
///            + centripetal_gain * (centroid(p[0..t]) - p[t])
/// then |v[t+1]| is clamped to max_step() and to the remaining path-length
/// budget, and p[t+1] = p[t] + v[t+1]. An impulse fires with probability
/// impulse_prob and adds impulse_scale times a uniformly random unit vector.
/// The random draws per step are fixed (2 normals, 1 uniform, 1 angle) so
/// the stream does not depend on which branches fire.
inline Trajectory generate_trajectory(const TrajectoryConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double nominal = cfg.max_length / cfg.iterations;

  Vec2 v;
  if (cfg.initial_velocity) {
    v = *cfg.initial_velocity;
  } else {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    v = {nominal * std::cos(angle), nominal * std::sin(angle)};
  }

  Trajectory traj;
  traj.points.reserve(cfg.iterations + 1);
  traj.velocities.reserve(cfg.iterations + 1);
  traj.points.push_back({0.0, 0.0});
  traj.velocities.push_back(v);

  Vec2 sum{0.0, 0.0};
  double travelled = 0.0;
  const double cap = cfg.max_step();
  for (int t = 0; t < cfg.iterations; ++t) {
    const Vec2 p = traj.points.back();
    sum += p;
    const Vec2 centroid = (1.0 / (t + 1)) * sum;

    const Vec2 noise{rng.normal() * cfg.gaussian_std, rng.normal() * cfg.gaussian_std};
    const bool impulse = rng.uniform() < cfg.impulse_prob;
    const double impulse_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);

    Vec2 next = cfg.inertia * v + noise + cfg.centripetal_gain * (centroid - p);
    if (impulse) {
      next += cfg.impulse_scale * Vec2{std::cos(impulse_angle), std::sin(impulse_angle)};
      ++traj.impulse_count;
    }

    const double remaining = std::max(0.0, cfg.max_length - travelled);
    const double limit = std::min(cap, remaining);
    const double speed = next.norm();
    if (speed > limit) next = speed > 0.0 ? (limit / speed) * next : Vec2{};
    travelled += next.norm();

    v = next;
    traj.points.push_back(p + v);
    traj.velocities.push_back(v);
  }
  return traj;
}

struct Extent {
  double width = 0.0;
  double height = 0.0;
};

/// Bounding-box size of the trajectory points.
inline Extent trajectory_extent(const Trajectory& traj) {
  if (traj.points.empty()) return {};
  double min_x = traj.points[0].x, max_x = min_x;
  double min_y = traj.points[0].y, max_y = min_y;
  for (const Vec2& p : traj.points) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  return {max_x - min_x, max_y - min_y};
}

/// Returns a copy with every point shifted by `offset`.
inline Trajectory translate(const Trajectory& traj, Vec2 offset) {
  Trajectory out = traj;
  for (Vec2& p : out.points) p += offset;
  return out;
}

/// Debug export: one "x y" pair per line.
inline void write_trajectory(std::ostream& os, const Trajectory& traj) {
  char buf[96];
  for (const Vec2& p : traj.points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
    os << buf;
  }
}

}  // namespace deblur
