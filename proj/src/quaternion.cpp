#include "pgs/quaternion.hpp"

#include <cmath>

namespace pgs::quat {

Mat3 to_matrix(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec4 to_matrix_vjp(const Vec4& q, const Mat3& g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return {(dw.array() * g.array()).sum(), (dx.array() * g.array()).sum(),
          (dy.array() * g.array()).sum(), (dz.array() * g.array()).sum()};
}

Vec4 multiply(const Vec4& p, const Vec4& q) { return left_matrix(p) * q; }

Mat4 left_matrix(const Vec4& p) {
  Mat4 m;
  m << p[0], -p[1], -p[2], -p[3],
      p[1], p[0], -p[3], p[2],
      p[2], p[3], p[0], -p[1],
      p[3], -p[2], p[1], p[0];
  return m;
}

Mat4 right_matrix(const Vec4& q) {
  Mat4 m;
  m << q[0], -q[1], -q[2], -q[3],
      q[1], q[0], q[3], -q[2],
      q[2], -q[3], q[0], q[1],
      q[3], q[2], -q[1], q[0];
  return m;
}

namespace {

// s(a) = sin(a/2)/a and s'(a)/a, with series below the cutoff.
constexpr double kSeriesCutoff = 1e-3;

double half_sinc(double a) {
  if (a < kSeriesCutoff) return 0.5 - a * a / 48.0 + a * a * a * a / 3840.0;
  return std::sin(0.5 * a) / a;
}

double half_sinc_deriv_over_a(double a) {
  if (a < kSeriesCutoff) return -1.0 / 24.0 + a * a / 960.0;
  return (0.5 * a * std::cos(0.5 * a) - std::sin(0.5 * a)) / (a * a * a);
}

}  // namespace

Vec4 exp_map(const Eigen::Vector3d& phi) {
  const double a = phi.norm();
  const double s = half_sinc(a);
  return {std::cos(0.5 * a), s * phi[0], s * phi[1], s * phi[2]};
}

Eigen::Matrix<double, 4, 3> exp_map_jacobian(const Eigen::Vector3d& phi) {
  const double a = phi.norm();
  Eigen::Matrix<double, 4, 3> j;
  // d cos(a/2) / d phi = -sin(a/2)/2 * phi/a = -s(a)/2 * phi
  j.row(0) = -0.5 * half_sinc(a) * phi.transpose();
  j.bottomRows<3>() = half_sinc(a) * Eigen::Matrix3d::Identity() +
                      half_sinc_deriv_over_a(a) * phi * phi.transpose();
  return j;
}

Vec4 from_axis_angle(const Eigen::Vector3d& axis, double angle) {
  return exp_map(axis.normalized() * angle);
}

}  // namespace pgs::quat
