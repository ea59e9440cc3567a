#pragma once

#include "pgs/scene.hpp"

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace pgs {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kNearPlane = 0.01;
inline constexpr double kDilation = 0.3;          // px^2 added to every projected covariance
inline constexpr double kMinAlpha = 1.0 / 255.0;  // compositing skip threshold
inline constexpr double kShC0 = 0.28209479177387814;

/// Real SH basis values Y_k(dir), k < (degree+1)^2.
void sh_basis(int degree, const Vec3& dir, std::span<double> out);
/// Color from per-channel coefficients laid out [c][k], clamped to [0,1].
Vec3 sh_color(std::span<const double> coeffs, int degree, const Vec3& dir);

struct ProjectedGaussian {
  std::size_t index = 0;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Mat2 conic = Mat2::Identity();  // cov2d^-1
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  Vec3 color_raw = Vec3::Zero();  // before the [0,1] clamp
  double alpha = 0.0;
  double radius = 0.0;  // px; beyond it alpha*G < 1/255
};

/// Pinhole projection with the local-affine covariance. nullopt when culled.
std::optional<ProjectedGaussian> project_gaussian(const GaussianSet& set, std::size_t i, const Camera& cam);

/// Interleaved RGB, row-major, values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0) {}
  double& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

struct RenderTarget {
  Image image;
  std::vector<double> transmittance;  // per pixel, after the last contribution
  // replay data for the backward pass
  std::vector<ProjectedGaussian> projected;       // depth order
  int tile = 16;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<std::uint32_t>> bins;   // per screen tile, positions into `projected`
};

/// Front-to-back compositing over a black background; pixel centers at (x+0.5, y+0.5).
RenderTarget render(const GaussianSet& set, const Camera& cam);

/// Accumulates dL/dtheta given dL/d(rgb) of the render.
void render_backward(const RenderTarget& rt, const GaussianSet& set, const Camera& cam, const Image& d_rgb,
                     GradBuffer& grads);

struct VisualLoss {
  double loss = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  Image grad;  // dloss/d(rendered), empty unless requested
};

/// (1 - w_ssim) * L1 + w_ssim * (1 - SSIM), 11x11 Gaussian window (sigma 1.5).
VisualLoss visual_loss(const Image& rendered, const Image& target, double w_ssim = 0.2, bool with_grad = true);
double ssim(const Image& a, const Image& b);

Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace pgs
