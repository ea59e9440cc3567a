#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace pgs {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kMaxShDegree = 3;
inline constexpr double kUnitQuatTol = 1e-6;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

enum class ParamGroup { Means, Rotations, LogScales, OpacityLogits, Sh };
inline constexpr std::array<ParamGroup, 5> kAllGroups = {
    ParamGroup::Means, ParamGroup::Rotations, ParamGroup::LogScales,
    ParamGroup::OpacityLogits, ParamGroup::Sh};
std::string_view group_name(ParamGroup g);

struct ParamTag {};
struct GradTag {};

/// Structure-of-arrays storage for N Gaussians. Parameters live in their
/// unconstrained spaces:
///   means           [N,3]        world positions (grid units)
///   rotations       [N,4]        quaternions (w,x,y,z)
///   log_scales      [N,3]        s = exp(log_scale)
///   opacity_logits  [N]          alpha = sigmoid(logit)
///   sh              [N,3,K]      K = (L+1)^2 coefficients per color channel
/// The tag separates parameter sets from gradient buffers of the same layout.
template <class Tag>
struct GaussianArrays {
  int sh_degree = 1;
  std::vector<double> means;
  std::vector<double> rotations;
  std::vector<double> log_scales;
  std::vector<double> opacity_logits;
  std::vector<double> sh;

  std::size_t size() const { return opacity_logits.size(); }
  int coeffs() const { return sh_coeff_count(sh_degree); }

  void resize(std::size_t n, int degree) {
    sh_degree = degree;
    means.assign(3 * n, 0.0);
    rotations.assign(4 * n, 0.0);
    log_scales.assign(3 * n, 0.0);
    opacity_logits.assign(n, 0.0);
    sh.assign(3 * n * static_cast<std::size_t>(sh_coeff_count(degree)), 0.0);
  }

  Eigen::Map<Vec3> mean(std::size_t i) { return Eigen::Map<Vec3>(means.data() + 3 * i); }
  Eigen::Map<const Vec3> mean(std::size_t i) const { return Eigen::Map<const Vec3>(means.data() + 3 * i); }
  Eigen::Map<Vec4> rotation(std::size_t i) { return Eigen::Map<Vec4>(rotations.data() + 4 * i); }
  Eigen::Map<const Vec4> rotation(std::size_t i) const { return Eigen::Map<const Vec4>(rotations.data() + 4 * i); }
  Eigen::Map<Vec3> log_scale(std::size_t i) { return Eigen::Map<Vec3>(log_scales.data() + 3 * i); }
  Eigen::Map<const Vec3> log_scale(std::size_t i) const { return Eigen::Map<const Vec3>(log_scales.data() + 3 * i); }
  /// Coefficient k of color channel c.
  double& sh_at(std::size_t i, int c, int k) { return sh[(3 * i + static_cast<std::size_t>(c)) * static_cast<std::size_t>(coeffs()) + static_cast<std::size_t>(k)]; }
  double sh_at(std::size_t i, int c, int k) const { return sh[(3 * i + static_cast<std::size_t>(c)) * static_cast<std::size_t>(coeffs()) + static_cast<std::size_t>(k)]; }

  std::span<double> group(ParamGroup g) {
    switch (g) {
      case ParamGroup::Means: return means;
      case ParamGroup::Rotations: return rotations;
      case ParamGroup::LogScales: return log_scales;
      case ParamGroup::OpacityLogits: return opacity_logits;
      case ParamGroup::Sh: return sh;
    }
    return {};
  }
  std::span<const double> group(ParamGroup g) const {
    return const_cast<GaussianArrays*>(this)->group(g);
  }

  bool operator==(const GaussianArrays&) const = default;
};

using GaussianSet = GaussianArrays<ParamTag>;

/// Accumulated dJ/dtheta, same layout as the GaussianSet it mirrors.
struct GradBuffer : GaussianArrays<GradTag> {
  static GradBuffer zeros_like(const GaussianSet& set);
  void add(const GradBuffer& other, double weight = 1.0);
  void scale(double s);
  double group_norm(ParamGroup g) const;
  bool all_finite() const;
  bool same_shape(const GaussianSet& set) const;
};

double sigmoid(double x);
double logit(double p);
double opacity(const GaussianSet& set, std::size_t i);

/// Sigma = R(q) diag(s^2) R(q)^T. Throws InvalidParameter for |q| != 1 or s <= 0.
Mat3 covariance(const Vec4& q, const Vec3& s);
/// R(q) diag(s^-2) R(q)^T, same preconditions as covariance.
Mat3 inverse_covariance(const Vec4& q, const Vec3& s);

/// Unchecked kernels used inside forward passes (finite-difference probes move
/// q slightly off the unit sphere).
Mat3 covariance_raw(const Vec4& q, const Vec3& s);
Mat3 inverse_covariance_raw(const Vec4& q, const Vec3& s);

/// Pulls a cotangent on Sigma^-1 (as computed by inverse_covariance_raw) back
/// to (q, log_scale).
void inverse_covariance_vjp(const Vec4& q, const Vec3& log_s, const Mat3& d_inv,
                            Vec4& dq, Vec3& dlog_s);
/// Same for Sigma.
void covariance_vjp(const Vec4& q, const Vec3& log_s, const Mat3& d_cov, Vec4& dq,
                    Vec3& dlog_s);

/// Renormalizes every rotation to unit length.
void normalize_rotations(GaussianSet& set);

/// Throws InvalidParameter when shapes disagree or a value is non-finite.
void validate(const GaussianSet& set);

struct Camera {
  Mat3 rotation = Mat3::Identity();  // world to camera
  Vec3 translation = Vec3::Zero();
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  Vec3 to_camera(const Vec3& x) const { return rotation * x + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }

  /// Pinhole looking from eye toward target; +y of the image points down.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg,
                        int width, int height);
};

/// Throws InvalidParameter unless rotation is orthonormal (1e-6) and size >= 1.
void validate(const Camera& cam);

}  // namespace pgs
