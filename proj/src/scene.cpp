#include "pgs/scene.hpp"

#include "pgs/common.hpp"
#include "pgs/quaternion.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <string>

namespace pgs {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Means: return "means";
    case ParamGroup::Rotations: return "rotations";
    case ParamGroup::LogScales: return "log_scales";
    case ParamGroup::OpacityLogits: return "opacity_logits";
    case ParamGroup::Sh: return "sh";
  }
  return "?";
}

GradBuffer GradBuffer::zeros_like(const GaussianSet& set) {
  GradBuffer g;
  g.resize(set.size(), set.sh_degree);
  return g;
}

void GradBuffer::add(const GradBuffer& other, double weight) {
  for (ParamGroup grp : kAllGroups) {
    auto dst = group(grp);
    auto src = other.group(grp);
    require(dst.size() == src.size(), "GradBuffer::add: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
  }
}

void GradBuffer::scale(double s) {
  for (ParamGroup grp : kAllGroups)
    for (double& v : group(grp)) v *= s;
}

double GradBuffer::group_norm(ParamGroup g) const {
  double acc = 0.0;
  for (double v : group(g)) acc += v * v;
  return std::sqrt(acc);
}

bool GradBuffer::all_finite() const {
  for (ParamGroup grp : kAllGroups)
    for (double v : group(grp))
      if (!std::isfinite(v)) return false;
  return true;
}

bool GradBuffer::same_shape(const GaussianSet& set) const {
  for (ParamGroup grp : kAllGroups)
    if (group(grp).size() != set.group(grp).size()) return false;
  return sh_degree == set.sh_degree;
}

double sigmoid(double x) {
  // Kept strictly inside (0, 1): large logits would otherwise round to 1.
  constexpr double kTop = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  if (x >= 0) return std::min(1.0 / (1.0 + std::exp(-x)), kTop);
  const double e = std::exp(x);
  return std::max(e / (1.0 + e), std::numeric_limits<double>::denorm_min());
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double opacity(const GaussianSet& set, std::size_t i) { return sigmoid(set.opacity_logits[i]); }

namespace {

void check_params(const Vec4& q, const Vec3& s) {
  if (std::abs(q.norm() - 1.0) > kUnitQuatTol)
    throw InvalidParameter("quaternion norm " + std::to_string(q.norm()) + " is not 1");
  if ((s.array() <= 0.0).any() || !s.allFinite())
    throw InvalidParameter("scales must be positive and finite");
}

}  // namespace

Mat3 covariance_raw(const Vec4& q, const Vec3& s) {
  const Mat3 r = quat::to_matrix(q);
  return r * s.array().square().matrix().asDiagonal() * r.transpose();
}

Mat3 inverse_covariance_raw(const Vec4& q, const Vec3& s) {
  const Mat3 r = quat::to_matrix(q);
  return r * s.array().square().inverse().matrix().asDiagonal() * r.transpose();
}

Mat3 covariance(const Vec4& q, const Vec3& s) {
  check_params(q, s);
  Mat3 c = covariance_raw(q, s);
  return 0.5 * (c + c.transpose());
}

Mat3 inverse_covariance(const Vec4& q, const Vec3& s) {
  check_params(q, s);
  Mat3 c = inverse_covariance_raw(q, s);
  return 0.5 * (c + c.transpose());
}

namespace {

// M = R diag(d) R^T with d_k = exp(sign * 2 * log_s_k).
void rotated_diag_vjp(const Vec4& q, const Vec3& log_s, double sign, const Mat3& g, Vec4& dq,
                      Vec3& dlog_s) {
  const Mat3 r = quat::to_matrix(q);
  const Vec3 d = (sign * 2.0 * log_s).array().exp();
  const Mat3 gs = g + g.transpose();
  const Mat3 dr = gs * r * d.asDiagonal();
  dq = quat::to_matrix_vjp(q, dr);
  for (int k = 0; k < 3; ++k)
    dlog_s[k] = sign * 2.0 * d[k] * r.col(k).dot(g * r.col(k));
}

}  // namespace

void inverse_covariance_vjp(const Vec4& q, const Vec3& log_s, const Mat3& d_inv, Vec4& dq,
                            Vec3& dlog_s) {
  rotated_diag_vjp(q, log_s, -1.0, d_inv, dq, dlog_s);
}

void covariance_vjp(const Vec4& q, const Vec3& log_s, const Mat3& d_cov, Vec4& dq,
                    Vec3& dlog_s) {
  rotated_diag_vjp(q, log_s, 1.0, d_cov, dq, dlog_s);
}

void normalize_rotations(GaussianSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) set.rotation(i).normalize();
}

void validate(const GaussianSet& set) {
  const std::size_t n = set.size();
  if (set.sh_degree < 0 || set.sh_degree > kMaxShDegree)
    throw InvalidParameter("sh_degree must be in [0,3]");
  if (set.means.size() != 3 * n || set.rotations.size() != 4 * n ||
      set.log_scales.size() != 3 * n ||
      set.sh.size() != 3 * n * static_cast<std::size_t>(set.coeffs()))
    throw InvalidParameter("GaussianSet arrays disagree in length");
  for (ParamGroup g : kAllGroups)
    for (double v : set.group(g))
      if (!std::isfinite(v))
        throw InvalidParameter("non-finite value in " + std::string(group_name(g)));
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg,
                       int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
  cam.fx = cam.fy = f;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  return cam;
}

void validate(const Camera& cam) {
  if ((cam.rotation * cam.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw InvalidParameter("camera rotation is not orthonormal");
  if (cam.width < 1 || cam.height < 1) throw InvalidParameter("camera size must be >= 1");
  if (!(cam.fx > 0 && cam.fy > 0)) throw InvalidParameter("focal lengths must be positive");
}

}  // namespace pgs
