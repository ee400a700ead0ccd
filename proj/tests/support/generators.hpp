#pragma once

#include "ds4d/geometry.hpp"
#include "ds4d/messages.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace ds4d::testgen {

/// Small hand-rolled generator for property tests. Every draw comes from one
/// seeded engine, so a failing case is reproduced by its seed alone.
class Gen {
public:
  explicit Gen(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double sigma = 1.0) { return std::normal_distribution<double>(0.0, sigma)(engine_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t u64() { return engine_(); }
  bool coin() { return integer(0, 1) == 1; }

  Vec3 vec3(double lo = -1.0, double hi = 1.0) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }

  Vec3 unit_vec3() {
    Vec3 v;
    do {
      v = Vec3(normal(), normal(), normal());
    } while (v.norm() < 1e-6);
    return v.normalized();
  }

  /// Uniform over SO(3) (Shoemake's method).
  Rotation rotation() {
    const double u1 = uniform(0.0, 1.0);
    const double u2 = uniform(0.0, 2.0 * std::numbers::pi);
    const double u3 = uniform(0.0, 2.0 * std::numbers::pi);
    const double a = std::sqrt(1.0 - u1);
    const double b = std::sqrt(u1);
    return Rotation(a * std::sin(u2), a * std::cos(u2), b * std::sin(u3), b * std::cos(u3));
  }

  /// Rotation by at most `max_angle` radians.
  Rotation small_rotation(double max_angle) { return Rotation::from_axis_angle(unit_vec3(), uniform(0.0, max_angle)); }

  Transform transform(double extent = 1.0) { return {rotation(), vec3(-extent, extent)}; }
  /// Transform in the sign convention used on the wire (w >= 0).
  Transform wire_transform(double extent = 1.0) { return {rotation().canonical(), vec3(-extent, extent)}; }

  std::vector<double> doubles(std::size_t n, double lo = -10.0, double hi = 10.0) {
    std::vector<double> v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }

  MasterState master_state() {
    MasterState m;
    m.tip_pose = wire_transform();
    m.grip = uniform(0.0, 1.0);
    m.pedals = static_cast<std::uint8_t>(integer(0, 255));
    m.stamp_ns = u64();
    return m;
  }

  RobotCommand robot_command() {
    RobotCommand c;
    c.target = wire_transform();
    c.gripper_width = uniform(0.0, 0.08);
    c.stamp_ns = u64();
    return c;
  }

  SimState sim_state() {
    SimState s;
    s.q = doubles(static_cast<std::size_t>(integer(0, 9)), -3.0, 3.0);
    s.ee_pose = wire_transform();
    const int n = integer(0, 4);
    for (int i = 0; i < n; ++i) {
      s.objects.push_back({static_cast<std::uint16_t>(integer(0, 65535)), wire_transform()});
    }
    s.gripper_width = uniform(0.0, 0.08);
    s.task_success = coin();
    s.tick = u64();
    return s;
  }

  RecordStep record_step() {
    RecordStep s;
    s.obs = doubles(static_cast<std::size_t>(integer(0, 40)));
    s.action = doubles(static_cast<std::size_t>(integer(0, 10)));
    s.tick = u64();
    return s;
  }

  Message message() {
    switch (integer(0, 3)) {
      case 0: return master_state();
      case 1: return robot_command();
      case 2: return sim_state();
      default: return record_step();
    }
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace ds4d::testgen
