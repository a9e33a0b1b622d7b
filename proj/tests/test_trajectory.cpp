#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "deblur/trajectory.hpp"

using namespace deblur;

namespace {

TrajectoryConfig noise_free(int iterations, double max_length, Vec2 v0, double inertia = 1.0) {
  TrajectoryConfig c;
  c.iterations = iterations;
  c.max_length = max_length;
  c.gaussian_std = 0.0;
  c.impulse_prob = 0.0;
  c.impulse_scale = 0.0;
  c.centripetal_gain = 0.0;
  c.inertia = inertia;
  c.initial_velocity = v0;
  return c;
}

}  // namespace

TEST(Trajectory, SingleStepPureInertia) {
  const Trajectory t = generate_trajectory(noise_free(1, 1.0, {1.0, 0.0}));
  ASSERT_EQ(t.points.size(), 2u);
  EXPECT_EQ(t.points[0], (Vec2{0.0, 0.0}));
  EXPECT_EQ(t.points[1], (Vec2{1.0, 0.0}));
}

TEST(Trajectory, SeededDeterminism) {
  TrajectoryConfig c = TrajectoryConfig::defaults();
  c.seed = 1234;
  const Trajectory a = generate_trajectory(c);
  const Trajectory b = generate_trajectory(c);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i], b.points[i]);
    EXPECT_EQ(a.velocities[i], b.velocities[i]);
  }
  c.seed = 1235;
  EXPECT_NE(generate_trajectory(c).points.back(), a.points.back());
}

TEST(Trajectory, ConstantVelocityUnrollsToUniformSpacing) {
  // v[t+1] = v[t] with no perturbation: p[t] = t * (s, 0).
  const double s = 0.25;
  const Trajectory t = generate_trajectory(noise_free(100, 100 * s, {s, 0.0}));
  ASSERT_EQ(t.points.size(), 101u);
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    EXPECT_NEAR(t.points[i].x, s * static_cast<double>(i), 1e-9);
    EXPECT_EQ(t.points[i].y, 0.0);
  }
}

TEST(Trajectory, ShapeInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TrajectoryConfig c = TrajectoryConfig::defaults(300, 20.0);
    c.seed = seed;
    const Trajectory t = generate_trajectory(c);
    ASSERT_EQ(t.points.size(), 301u);
    ASSERT_EQ(t.velocities.size(), 301u);
    EXPECT_EQ(t.points[0], (Vec2{0.0, 0.0}));
    double total = 0.0;
    for (std::size_t i = 1; i < t.points.size(); ++i) {
      const double step = (t.points[i] - t.points[i - 1]).norm();
      EXPECT_LE(step, c.max_step() * (1 + 1e-12));
      total += step;
    }
    EXPECT_LE(total, c.max_length * (1 + 1e-12));
  }
}

TEST(Trajectory, ZeroMotionStaysAtOrigin) {
  const Trajectory t = generate_trajectory(noise_free(50, 10.0, {0.0, 0.0}, 0.7));
  for (const Vec2& p : t.points) EXPECT_EQ(p, (Vec2{0.0, 0.0}));
}

TEST(Trajectory, NoImpulsesAndDecayingSpeed) {
  TrajectoryConfig c = noise_free(200, 50.0, {0.2, 0.1}, 0.8);
  c.impulse_scale = 5.0;  // would be visible if any impulse fired
  const Trajectory t = generate_trajectory(c);
  EXPECT_EQ(t.impulse_count, 0);
  for (std::size_t i = 1; i < t.velocities.size(); ++i)
    EXPECT_LE(t.velocities[i].norm(), t.velocities[i - 1].norm());
}

TEST(Trajectory, ImpulsesFireWhenCertain) {
  TrajectoryConfig c = noise_free(10, 100.0, {0.0, 0.0});
  c.impulse_prob = 1.0;
  c.impulse_scale = 1.0;
  EXPECT_EQ(generate_trajectory(c).impulse_count, 10);
}

TEST(Trajectory, RejectsInvalidConfig) {
  TrajectoryConfig c = TrajectoryConfig::defaults();
  c.iterations = 0;
  EXPECT_THROW(generate_trajectory(c), ConfigError);
  c = TrajectoryConfig::defaults();
  c.gaussian_std = -1;
  EXPECT_THROW(generate_trajectory(c), ConfigError);
  c = TrajectoryConfig::defaults();
  c.impulse_prob = 1.5;
  EXPECT_THROW(generate_trajectory(c), ConfigError);
  c = TrajectoryConfig::defaults();
  c.inertia = -0.1;
  EXPECT_THROW(generate_trajectory(c), ConfigError);
}

TEST(TrajectoryExtent, Basics) {
  Trajectory one;
  one.points = {{0, 0}};
  EXPECT_EQ(trajectory_extent(one).width, 0.0);
  EXPECT_EQ(trajectory_extent(one).height, 0.0);

  Trajectory two;
  two.points = {{0, 0}, {3, 4}};
  EXPECT_EQ(trajectory_extent(two).width, 3.0);
  EXPECT_EQ(trajectory_extent(two).height, 4.0);
}

TEST(TrajectoryExtent, MatchesLinearScan) {
  TrajectoryConfig c = TrajectoryConfig::defaults(99, 30.0);
  c.seed = 77;
  const Trajectory t = generate_trajectory(c);
  ASSERT_EQ(t.points.size(), 100u);
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const Vec2& p : t.points) {
    if (p.x < lo_x) lo_x = p.x;
    if (p.x > hi_x) hi_x = p.x;
    if (p.y < lo_y) lo_y = p.y;
    if (p.y > hi_y) hi_y = p.y;
  }
  EXPECT_EQ(trajectory_extent(t).width, hi_x - lo_x);
  EXPECT_EQ(trajectory_extent(t).height, hi_y - lo_y);
}

TEST(Trajectory, TextExport) {
  Trajectory t;
  t.points = {{0, 0}, {1.5, -2}};
  std::ostringstream os;
  write_trajectory(os, t);
  EXPECT_EQ(os.str(), "0 0\n1.5 -2\n");
}
