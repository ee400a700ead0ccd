#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <stdexcept>

namespace ds4d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

class GeometryError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Unit quaternion rotation (w, x, y, z).
///
/// Every constructor normalizes and rejects non-finite or zero-norm input, so
/// a Rotation value always satisfies | |q| - 1 | <= 1e-9. The sign of the
/// quaternion is kept as computed; only serialization canonicalizes w >= 0.
class Rotation {
public:
  Rotation() = default;
  Rotation(double w, double x, double y, double z);

  static Rotation identity() { return {}; }
  /// Accepts coefficients already unit within 1e-9 and keeps them bit-exact.
  static Rotation from_unit_coeffs(double w, double x, double y, double z);
  static Rotation from_axis_angle(const Vec3& axis, double angle);
  /// Rotation vector (axis * angle) to quaternion.
  static Rotation exp(const Vec3& rotation_vector);
  static Rotation from_matrix(const Mat3& m);
  static Rotation rx(double angle) { return from_axis_angle(Vec3::UnitX(), angle); }
  static Rotation ry(double angle) { return from_axis_angle(Vec3::UnitY(), angle); }
  static Rotation rz(double angle) { return from_axis_angle(Vec3::UnitZ(), angle); }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  Rotation operator*(const Rotation& rhs) const;
  Vec3 rotate(const Vec3& v) const;
  Rotation inverse() const { return Rotation(w_, -x_, -y_, -z_, RawTag{}); }
  /// Same rotation, opposite quaternion sign.
  Rotation negated() const { return Rotation(-w_, -x_, -y_, -z_, RawTag{}); }
  /// Sign chosen so that w >= 0 (x, then y, then z break ties at w == 0).
  Rotation canonical() const;
  /// Rotation vector in (-pi, pi] * axis.
  Vec3 log() const;
  Mat3 matrix() const;

  std::array<double, 4> coeffs() const { return {w_, x_, y_, z_}; }

  bool operator==(const Rotation&) const = default;

private:
  struct RawTag {};
  Rotation(double w, double x, double y, double z, RawTag) : w_(w), x_(x), y_(y), z_(z) {}

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Rigid transform X = [R p; 0 1]. Composition follows the homogeneous
/// matrix product: (a * b).apply(p) == a.apply(b.apply(p)).
class Transform {
public:
  Transform() = default;
  Transform(const Rotation& rotation, const Vec3& translation);

  static Transform identity() { return {}; }
  static Transform from_translation(const Vec3& p) { return {Rotation::identity(), p}; }
  static Transform from_rotation(const Rotation& r) { return {r, Vec3::Zero()}; }
  static Transform from_matrix(const Mat4& m);

  const Rotation& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Mat4 matrix() const;

  bool operator==(const Transform& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

private:
  Rotation rotation_;
  Vec3 translation_ = Vec3::Zero();
};

Transform compose(const Transform& a, const Transform& b);
Transform inverse(const Transform& t);
Vec3 apply(const Transform& t, const Vec3& p);
inline Transform operator*(const Transform& a, const Transform& b) { return compose(a, b); }

/// Shortest-arc spherical interpolation; s is clamped to [0, 1].
Rotation slerp(const Rotation& a, const Rotation& b, double s);
/// Geodesic angle in [0, pi], independent of either quaternion's sign.
double angle_between(const Rotation& a, const Rotation& b);

/// Rotates `from` toward `to` by at most `max_step` radians along the geodesic.
Rotation rotate_toward(const Rotation& from, const Rotation& to, double max_step);

/// Canonical 7-double encoding (qw, qx, qy, qz, px, py, pz) with w >= 0.
std::array<double, 7> to_array(const Transform& t);
/// Inverse of to_array. Throws GeometryError on non-finite or non-unit input.
Transform from_array(const std::array<double, 7>& a);

bool is_finite(const Vec3& v);

}  // namespace ds4d
