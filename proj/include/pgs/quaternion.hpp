#pragma once

// Quaternions are (w, x, y, z), Hamilton product, active rotations.

#include <Eigen/Core>

namespace pgs::quat {

using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline Vec4 identity() { return {1.0, 0.0, 0.0, 0.0}; }

/// Rotation matrix of q via the polynomial formula. Exact rotation only for |q| = 1;
/// the optimizer renormalizes after every step.
Mat3 to_matrix(const Vec4& q);

/// Pulls back a cotangent on to_matrix(q) to a cotangent on q.
Vec4 to_matrix_vjp(const Vec4& q, const Mat3& dR);

/// p ⊗ q.
Vec4 multiply(const Vec4& p, const Vec4& q);

/// Matrix of q ↦ p ⊗ q.
Mat4 left_matrix(const Vec4& p);

/// Matrix of p ↦ p ⊗ q.
Mat4 right_matrix(const Vec4& q);

/// Unit quaternion of a rotation by |phi| about phi/|phi|.
Vec4 exp_map(const Eigen::Vector3d& phi);

/// Jacobian d exp_map / d phi (4×3), smooth through phi = 0.
Eigen::Matrix<double, 4, 3> exp_map_jacobian(const Eigen::Vector3d& phi);

Vec4 from_axis_angle(const Eigen::Vector3d& axis, double angle);

}  // namespace pgs::quat
