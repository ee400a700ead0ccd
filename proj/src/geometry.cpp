#include "ds4d/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace ds4d {

namespace {

constexpr double kUnitTolerance = 1e-9;
// Above this cosine the two quaternions are treated as parallel and slerp
// falls back to normalized lerp.
constexpr double kParallelDot = 1.0 - 1e-9;

bool finite4(double w, double x, double y, double z) {
  return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

}  // namespace

bool is_finite(const Vec3& v) { return v.allFinite(); }

Rotation::Rotation(double w, double x, double y, double z) {
  if (!finite4(w, x, y, z)) {
    throw GeometryError("rotation: non-finite quaternion component");
  }
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n < 1e-12) {
    throw GeometryError("rotation: zero-norm quaternion");
  }
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
}

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle) {
  if (!is_finite(axis) || !std::isfinite(angle)) {
    throw GeometryError("rotation: non-finite axis-angle");
  }
  const double n = axis.norm();
  if (n < 1e-12) {
    throw GeometryError("rotation: zero axis");
  }
  const double h = 0.5 * angle;
  const double s = std::sin(h) / n;
  return Rotation(std::cos(h), axis.x() * s, axis.y() * s, axis.z() * s);
}

Rotation Rotation::from_unit_coeffs(double w, double x, double y, double z) {
  if (!finite4(w, x, y, z)) {
    throw GeometryError("rotation: non-finite quaternion component");
  }
  if (std::abs(std::sqrt(w * w + x * x + y * y + z * z) - 1.0) > kUnitTolerance) {
    throw GeometryError("rotation: quaternion is not unit-norm");
  }
  return Rotation(w, x, y, z, RawTag{});
}

Rotation Rotation::exp(const Vec3& v) {
  if (!is_finite(v)) {
    throw GeometryError("rotation: non-finite rotation vector");
  }
  const double angle = v.norm();
  if (angle < 1e-12) {
    // First-order expansion keeps tiny increments exact to rounding.
    return Rotation(1.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z());
  }
  return from_axis_angle(v / angle, angle);
}

Rotation Rotation::from_matrix(const Mat3& m) {
  if (!m.allFinite()) {
    throw GeometryError("rotation: non-finite matrix");
  }
  const double trace = m.trace();
  if (trace > 0.0) {
    const double s = 2.0 * std::sqrt(trace + 1.0);
    return Rotation(0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
                    (m(1, 0) - m(0, 1)) / s);
  }
  if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    return Rotation((m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
                    (m(0, 2) + m(2, 0)) / s);
  }
  if (m(1, 1) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    return Rotation((m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
                    (m(1, 2) + m(2, 1)) / s);
  }
  const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
  return Rotation((m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s,
                  0.25 * s);
}

Rotation Rotation::operator*(const Rotation& r) const {
  return Rotation(w_ * r.w_ - x_ * r.x_ - y_ * r.y_ - z_ * r.z_,
                  w_ * r.x_ + x_ * r.w_ + y_ * r.z_ - z_ * r.y_,
                  w_ * r.y_ - x_ * r.z_ + y_ * r.w_ + z_ * r.x_,
                  w_ * r.z_ + x_ * r.y_ - y_ * r.x_ + z_ * r.w_);
}

Vec3 Rotation::rotate(const Vec3& v) const {
  // v' = v + 2w (u x v) + 2 u x (u x v), u = (x, y, z)
  const Vec3 u(x_, y_, z_);
  const Vec3 t = 2.0 * u.cross(v);
  return v + w_ * t + u.cross(t);
}

Rotation Rotation::canonical() const {
  bool flip = false;
  if (w_ < 0.0) {
    flip = true;
  } else if (w_ == 0.0) {
    if (x_ != 0.0) {
      flip = x_ < 0.0;
    } else if (y_ != 0.0) {
      flip = y_ < 0.0;
    } else {
      flip = z_ < 0.0;
    }
  }
  return flip ? negated() : *this;
}

Vec3 Rotation::log() const {
  const Rotation q = w_ < 0.0 ? negated() : *this;
  const Vec3 u(q.x_, q.y_, q.z_);
  const double s = u.norm();
  if (s < 1e-12) {
    return 2.0 * u;
  }
  const double angle = 2.0 * std::atan2(s, q.w_);
  return u * (angle / s);
}

Mat3 Rotation::matrix() const {
  Mat3 m;
  const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
  const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
  const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
  m << ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy),
      2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx),
      2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz;
  return m;
}

Transform::Transform(const Rotation& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_finite(translation)) {
    throw GeometryError("transform: non-finite translation");
  }
}

Transform Transform::from_matrix(const Mat4& m) {
  return Transform(Rotation::from_matrix(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>());
}

Mat4 Transform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_.matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Transform compose(const Transform& a, const Transform& b) {
  return Transform(a.rotation() * b.rotation(),
                   a.translation() + a.rotation().rotate(b.translation()));
}

Transform inverse(const Transform& t) {
  const Rotation r = t.rotation().inverse();
  return Transform(r, -r.rotate(t.translation()));
}

Vec3 apply(const Transform& t, const Vec3& p) {
  return t.rotation().rotate(p) + t.translation();
}

Rotation slerp(const Rotation& a, const Rotation& b_in, double s) {
  s = std::clamp(s, 0.0, 1.0);
  double dot = a.w() * b_in.w() + a.x() * b_in.x() + a.y() * b_in.y() + a.z() * b_in.z();
  const Rotation b = dot < 0.0 ? b_in.negated() : b_in;
  dot = std::abs(dot);
  if (s == 0.0) {
    return a;
  }
  if (s == 1.0) {
    return b_in;
  }
  double wa = 1.0 - s;
  double wb = s;
  if (dot <= kParallelDot) {
    const double theta = std::acos(std::min(dot, 1.0));
    const double sin_theta = std::sin(theta);
    wa = std::sin((1.0 - s) * theta) / sin_theta;
    wb = std::sin(s * theta) / sin_theta;
  }
  return Rotation(wa * a.w() + wb * b.w(), wa * a.x() + wb * b.x(), wa * a.y() + wb * b.y(),
                  wa * a.z() + wb * b.z());
}

double angle_between(const Rotation& a, const Rotation& b) {
  const double dot =
      std::abs(a.w() * b.w() + a.x() * b.x() + a.y() * b.y() + a.z() * b.z());
  // atan2 form stays accurate near 0 where acos(dot) loses half the digits.
  const Rotation d = a.inverse() * b;
  const double s = std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
  return 2.0 * std::atan2(s, std::min(dot, 1.0));
}

Rotation rotate_toward(const Rotation& from, const Rotation& to, double max_step) {
  const double angle = angle_between(from, to);
  if (angle <= max_step) {
    return to;
  }
  return slerp(from, to, max_step / angle);
}

std::array<double, 7> to_array(const Transform& t) {
  const Rotation q = t.rotation().canonical();
  const Vec3& p = t.translation();
  return {q.w(), q.x(), q.y(), q.z(), p.x(), p.y(), p.z()};
}

Transform from_array(const std::array<double, 7>& a) {
  for (double v : a) {
    if (!std::isfinite(v)) {
      throw GeometryError("transform: non-finite component");
    }
  }
  // Already unit within tolerance: keep the exact bits so decode(encode(x))
  // is the identity.
  return Transform(Rotation::from_unit_coeffs(a[0], a[1], a[2], a[3]), Vec3(a[4], a[5], a[6]));
}

}  // namespace ds4d
