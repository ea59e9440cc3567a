#include "pgs/splat.hpp"

#include "pgs/common.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace pgs {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2a = 1.0925484305920792;
constexpr double kC2b = 0.31539156525252005;
constexpr double kC2c = 0.5462742152960396;
constexpr double kC3a = -0.5900435899266435;
constexpr double kC3b = 2.890611442640554;
constexpr double kC3c = -0.4570457994644658;
constexpr double kC3d = 0.3731763325901154;
constexpr double kC3e = 1.445305721320277;

/// Basis values and their gradients with respect to the direction components.
void sh_eval(int degree, const Vec3& d, double* y, Vec3* dy) {
  const double x = d.x(), yy = d.y(), z = d.z();
  y[0] = kShC0;
  if (dy) dy[0].setZero();
  if (degree < 1) return;
  y[1] = -kC1 * yy;
  y[2] = kC1 * z;
  y[3] = -kC1 * x;
  if (dy) {
    dy[1] = {0, -kC1, 0};
    dy[2] = {0, 0, kC1};
    dy[3] = {-kC1, 0, 0};
  }
  if (degree < 2) return;
  const double xx = x * x, y2 = yy * yy, zz = z * z;
  y[4] = kC2a * x * yy;
  y[5] = -kC2a * yy * z;
  y[6] = kC2b * (2 * zz - xx - y2);
  y[7] = -kC2a * x * z;
  y[8] = kC2c * (xx - y2);
  if (dy) {
    dy[4] = kC2a * Vec3(yy, x, 0);
    dy[5] = -kC2a * Vec3(0, z, yy);
    dy[6] = kC2b * Vec3(-2 * x, -2 * yy, 4 * z);
    dy[7] = -kC2a * Vec3(z, 0, x);
    dy[8] = kC2c * Vec3(2 * x, -2 * yy, 0);
  }
  if (degree < 3) return;
  y[9] = kC3a * yy * (3 * xx - y2);
  y[10] = kC3b * x * yy * z;
  y[11] = kC3c * yy * (4 * zz - xx - y2);
  y[12] = kC3d * z * (2 * zz - 3 * xx - 3 * y2);
  y[13] = kC3c * x * (4 * zz - xx - y2);
  y[14] = kC3e * z * (xx - y2);
  y[15] = kC3a * x * (xx - 3 * y2);
  if (dy) {
    dy[9] = kC3a * Vec3(6 * x * yy, 3 * xx - 3 * y2, 0);
    dy[10] = kC3b * Vec3(yy * z, x * z, x * yy);
    dy[11] = kC3c * Vec3(-2 * x * yy, 4 * zz - xx - 3 * y2, 8 * yy * z);
    dy[12] = kC3d * Vec3(-6 * x * z, -6 * yy * z, 6 * zz - 3 * xx - 3 * y2);
    dy[13] = kC3c * Vec3(4 * zz - 3 * xx - y2, -2 * x * yy, 8 * x * z);
    dy[14] = kC3e * Vec3(2 * x * z, -2 * yy * z, xx - y2);
    dy[15] = kC3a * Vec3(3 * xx - 3 * y2, -6 * x * yy, 0);
  }
}

Vec3 raw_color(std::span<const double> coeffs, int degree, const Vec3& dir) {
  std::array<double, 16> y{};
  sh_eval(degree, dir, y.data(), nullptr);
  const int k = sh_coeff_count(degree);
  Vec3 c = Vec3::Zero();
  for (int ch = 0; ch < 3; ++ch)
    for (int j = 0; j < k; ++j) c[ch] += coeffs[static_cast<std::size_t>(ch * k + j)] * y[static_cast<std::size_t>(j)];
  return c;
}

struct Projection {
  Vec3 t;           // camera-space mean
  Eigen::Matrix<double, 2, 3> J;
  Eigen::Matrix<double, 2, 3> M;  // J W
  Mat3 sigma;
};

Projection linearize(const GaussianSet& set, std::size_t i, const Camera& cam) {
  Projection p;
  p.t = cam.to_camera(set.mean(i));
  const double z = p.t.z();
  p.J << cam.fx / z, 0, -cam.fx * p.t.x() / (z * z), 0, cam.fy / z, -cam.fy * p.t.y() / (z * z);
  p.M = p.J * cam.rotation;
  const Vec3 ls = set.log_scale(i);
  p.sigma = covariance_raw(set.rotation(i), ls.array().exp().matrix());
  return p;
}

}  // namespace

void sh_basis(int degree, const Vec3& dir, std::span<double> out) {
  require(degree >= 0 && degree <= kMaxShDegree, "sh degree out of range");
  require(out.size() >= static_cast<std::size_t>(sh_coeff_count(degree)), "sh_basis: output too small");
  std::array<double, 16> y{};
  sh_eval(degree, dir, y.data(), nullptr);
  std::copy_n(y.begin(), sh_coeff_count(degree), out.begin());
}

Vec3 sh_color(std::span<const double> coeffs, int degree, const Vec3& dir) {
  require(coeffs.size() == static_cast<std::size_t>(3 * sh_coeff_count(degree)), "sh_color: coefficient count");
  return raw_color(coeffs, degree, dir).cwiseMax(0.0).cwiseMin(1.0);
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianSet& set, std::size_t i, const Camera& cam) {
  const Vec3 t = cam.to_camera(set.mean(i));
  if (!(t.z() > kNearPlane)) return std::nullopt;
  const Projection p = linearize(set, i, cam);
  ProjectedGaussian g;
  g.index = i;
  g.depth = t.z();
  g.mean2d = {cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy};
  g.cov2d = p.M * p.sigma * p.M.transpose() + kDilation * Mat2::Identity();
  const double tr = g.cov2d.trace();
  const double det = g.cov2d.determinant();
  const double lmax = 0.5 * tr + std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
  const double sigma = std::sqrt(lmax);
  if (g.mean2d.x() < -3 * sigma || g.mean2d.x() > cam.width + 3 * sigma || g.mean2d.y() < -3 * sigma ||
      g.mean2d.y() > cam.height + 3 * sigma)
    return std::nullopt;
  g.conic = g.cov2d.inverse();
  g.alpha = sigmoid(set.opacity_logits[i]);
  // alpha * G >= 1/255 only inside this radius.
  const double reach = std::log(255.0 * g.alpha);
  if (!(reach > 0)) return std::nullopt;
  g.radius = std::sqrt(2.0 * reach * lmax);
  const Vec3 dir = (set.mean(i) - cam.center()).normalized();
  const int k = set.coeffs();
  g.color_raw = raw_color(std::span<const double>(set.sh).subspan(3 * i * static_cast<std::size_t>(k), 3 * static_cast<std::size_t>(k)),
                          set.sh_degree, dir);
  g.color = g.color_raw.cwiseMax(0.0).cwiseMin(1.0);
  return g;
}

RenderTarget render(const GaussianSet& set, const Camera& cam) {
  validate(cam);
  RenderTarget rt;
  rt.image = Image(cam.width, cam.height);
  rt.transmittance.assign(static_cast<std::size_t>(cam.width) * cam.height, 1.0);
  for (std::size_t i = 0; i < set.size(); ++i)
    if (auto g = project_gaussian(set, i, cam)) rt.projected.push_back(*g);
  std::stable_sort(rt.projected.begin(), rt.projected.end(),
                   [](const ProjectedGaussian& a, const ProjectedGaussian& b) { return a.depth < b.depth; });
  rt.tiles_x = (cam.width + rt.tile - 1) / rt.tile;
  rt.tiles_y = (cam.height + rt.tile - 1) / rt.tile;
  rt.bins.assign(static_cast<std::size_t>(rt.tiles_x) * rt.tiles_y, {});
  for (std::size_t p = 0; p < rt.projected.size(); ++p) {
    const auto& g = rt.projected[p];
    const int x0 = std::max(0, static_cast<int>(std::floor(g.mean2d.x() - g.radius - 0.5)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(g.mean2d.x() + g.radius - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(g.mean2d.y() - g.radius - 0.5)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(g.mean2d.y() + g.radius - 0.5)));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / rt.tile; ty <= y1 / rt.tile; ++ty)
      for (int tx = x0 / rt.tile; tx <= x1 / rt.tile; ++tx)
        rt.bins[static_cast<std::size_t>(ty * rt.tiles_x + tx)].push_back(static_cast<std::uint32_t>(p));
  }
  parallel_for(static_cast<std::ptrdiff_t>(cam.height), [&](std::ptrdiff_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < cam.width; ++x) {
      const auto& bin = rt.bins[static_cast<std::size_t>((y / rt.tile) * rt.tiles_x + x / rt.tile)];
      const Vec2 px(x + 0.5, y + 0.5);
      double T = 1.0;
      Vec3 c = Vec3::Zero();
      for (std::uint32_t p : bin) {
        const auto& g = rt.projected[p];
        const Vec2 d = px - g.mean2d;
        const double a = g.alpha * std::exp(-0.5 * d.dot(g.conic * d));
        if (a < kMinAlpha) continue;
        c += T * a * g.color;
        T *= 1.0 - a;
      }
      for (int ch = 0; ch < 3; ++ch) rt.image.at(x, y, ch) = c[ch];
      rt.transmittance[static_cast<std::size_t>(y) * cam.width + x] = T;
    }
  });
  return rt;
}

namespace {

struct ScreenGrad {
  Vec2 mean2d = Vec2::Zero();
  Mat2 conic = Mat2::Zero();
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;

  void add(const ScreenGrad& o) {
    mean2d += o.mean2d;
    conic += o.conic;
    color += o.color;
    alpha += o.alpha;
  }
};

}  // namespace

void render_backward(const RenderTarget& rt, const GaussianSet& set, const Camera& cam, const Image& d_rgb,
                     GradBuffer& grads) {
  require(d_rgb.width == rt.image.width && d_rgb.height == rt.image.height, "render_backward: image size mismatch");
  require(grads.same_shape(set), "render_backward: gradient shape mismatch");
  const std::size_t ntiles = rt.bins.size();
  std::vector<std::vector<ScreenGrad>> partial(ntiles);
  parallel_for(static_cast<std::ptrdiff_t>(ntiles), [&](std::ptrdiff_t ti) {
    const auto& bin = rt.bins[static_cast<std::size_t>(ti)];
    auto& acc = partial[static_cast<std::size_t>(ti)];
    acc.assign(bin.size(), ScreenGrad{});
    if (bin.empty()) return;
    const int tx = static_cast<int>(ti) % rt.tiles_x;
    const int ty = static_cast<int>(ti) / rt.tiles_x;
    struct Hit {
      std::size_t slot;
      double a, G, T;
      Vec2 d;
    };
    std::vector<Hit> hits;
    for (int y = ty * rt.tile; y < std::min(cam.height, (ty + 1) * rt.tile); ++y)
      for (int x = tx * rt.tile; x < std::min(cam.width, (tx + 1) * rt.tile); ++x) {
        const Vec3 dc(d_rgb.at(x, y, 0), d_rgb.at(x, y, 1), d_rgb.at(x, y, 2));
        if (dc.isZero()) continue;
        const Vec2 px(x + 0.5, y + 0.5);
        hits.clear();
        double T = 1.0;
        for (std::size_t s = 0; s < bin.size(); ++s) {
          const auto& g = rt.projected[bin[s]];
          const Vec2 d = px - g.mean2d;
          const double G = std::exp(-0.5 * d.dot(g.conic * d));
          const double a = g.alpha * G;
          if (a < kMinAlpha) continue;
          hits.push_back({s, a, G, T, d});
          T *= 1.0 - a;
        }
        Vec3 behind = Vec3::Zero();  // sum over later hits of c a T
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
          const auto& g = rt.projected[bin[it->slot]];
          ScreenGrad& sg = acc[it->slot];
          sg.color += it->a * it->T * dc;
          const double da = dc.dot(it->T * g.color - behind / (1.0 - it->a));
          behind += g.color * it->a * it->T;
          sg.alpha += da * it->G;
          const double dpow = da * g.alpha * it->G;
          sg.mean2d += dpow * (g.conic * it->d);
          sg.conic += -0.5 * dpow * it->d * it->d.transpose();
        }
      }
  });
  std::vector<ScreenGrad> total(rt.projected.size());
  for (std::size_t ti = 0; ti < ntiles; ++ti)
    for (std::size_t s = 0; s < rt.bins[ti].size(); ++s) total[rt.bins[ti][s]].add(partial[ti][s]);

  const Vec3 eye = cam.center();
  const int k = set.coeffs();
  parallel_for(static_cast<std::ptrdiff_t>(rt.projected.size()), [&](std::ptrdiff_t pp) {
    const auto& g = rt.projected[static_cast<std::size_t>(pp)];
    const ScreenGrad& sg = total[static_cast<std::size_t>(pp)];
    const std::size_t i = g.index;
    const Projection p = linearize(set, i, cam);
    const double z = p.t.z(), tx = p.t.x(), ty = p.t.y();
    // conic -> cov2d -> (M, Sigma)
    const Mat2 dcov = -g.conic.transpose() * sg.conic * g.conic.transpose();
    const Mat3 dsigma = p.M.transpose() * dcov * p.M;
    const Eigen::Matrix<double, 2, 3> dM = (dcov + dcov.transpose()) * p.M * p.sigma;
    const Eigen::Matrix<double, 2, 3> dJ = dM * cam.rotation.transpose();
    Vec3 dt;
    dt.x() = dJ(0, 2) * (-cam.fx / (z * z));
    dt.y() = dJ(1, 2) * (-cam.fy / (z * z));
    dt.z() = dJ(0, 0) * (-cam.fx / (z * z)) + dJ(0, 2) * (2 * cam.fx * tx / (z * z * z)) +
             dJ(1, 1) * (-cam.fy / (z * z)) + dJ(1, 2) * (2 * cam.fy * ty / (z * z * z));
    dt.x() += sg.mean2d.x() * cam.fx / z;
    dt.y() += sg.mean2d.y() * cam.fy / z;
    dt.z() += sg.mean2d.x() * (-cam.fx * tx / (z * z)) + sg.mean2d.y() * (-cam.fy * ty / (z * z));
    Vec3 dmean = cam.rotation.transpose() * dt;

    Vec4 dq = Vec4::Zero();
    Vec3 dls = Vec3::Zero();
    covariance_vjp(set.rotation(i), set.log_scale(i), dsigma, dq, dls);
    grads.rotation(i) += dq;
    grads.log_scale(i) += dls;

    // color: clamp subgradient is zero outside (0, 1)
    Vec3 draw = Vec3::Zero();
    for (int c = 0; c < 3; ++c)
      if (g.color_raw[c] > 0.0 && g.color_raw[c] < 1.0) draw[c] = sg.color[c];
    if (!draw.isZero()) {
      const Vec3 v = set.mean(i) - eye;
      const double vn = v.norm();
      const Vec3 dir = v / vn;
      std::array<double, 16> y{};
      std::array<Vec3, 16> dy{};
      sh_eval(set.sh_degree, dir, y.data(), dy.data());
      Vec3 ddir = Vec3::Zero();
      for (int c = 0; c < 3; ++c)
        for (int j = 0; j < k; ++j) {
          grads.sh_at(i, c, j) += draw[c] * y[static_cast<std::size_t>(j)];
          ddir += draw[c] * set.sh_at(i, c, j) * dy[static_cast<std::size_t>(j)];
        }
      dmean += (ddir - dir * dir.dot(ddir)) / vn;
    }
    grads.mean(i) += dmean;
    grads.opacity_logits[i] += sg.alpha * g.alpha * (1.0 - g.alpha);
  });
}

// -- visual loss ---------------------------------------------------------------

namespace {

constexpr int kWin = 11;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::array<double, kWin> window1d() {
  std::array<double, kWin> w{};
  double s = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * 1.5 * 1.5));
    s += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= s;
  return w;
}

/// Separable "same" Gaussian blur with zero padding on one plane.
std::vector<double> blur(const std::vector<double>& in, int w, int h) {
  static const auto win = window1d();
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  const int r = kWin / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) s += win[static_cast<std::size_t>(k + r)] * in[static_cast<std::size_t>(y * w + xx)];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) s += win[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(yy * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  return out;
}

/// Mean SSIM of one channel plane; optionally d(mean SSIM)/dx scaled by `g`.
double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, int w, int h, double g,
                  std::vector<double>* dx) {
  const std::size_t n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = blur(x, w, h), my = blur(y, w, h);
  const auto exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);
  double total = 0;
  std::vector<double> ga, gb, gc;
  if (dx) {
    ga.assign(n, 0.0);
    gb.assign(n, 0.0);
    gc.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a1 = 2 * mx[i] * my[i] + kSsimC1;
    const double a2 = 2 * (exy[i] - mx[i] * my[i]) + kSsimC2;
    const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
    const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kSsimC2;
    const double s = a1 * a2 / (b1 * b2);
    total += s;
    if (dx) {
      const double scale = g / static_cast<double>(n);
      ga[i] = scale * (2 * my[i] * (a2 - a1) / (b1 * b2) - s * (2 * mx[i] / b1 - 2 * mx[i] / b2));
      gb[i] = scale * (-s / b2);
      gc[i] = scale * (2 * a1 / (b1 * b2));
    }
  }
  if (dx) {
    const auto ca = blur(ga, w, h), cb = blur(gb, w, h), cc = blur(gc, w, h);
    dx->resize(n);
    for (std::size_t i = 0; i < n; ++i) (*dx)[i] = ca[i] + 2 * x[i] * cb[i] + y[i] * cc[i];
  }
  return total / static_cast<double>(n);
}

std::vector<double> plane(const Image& img, int c) {
  std::vector<double> p(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.rgb[3 * i + static_cast<std::size_t>(c)];
  return p;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require(a.width == b.width && a.height == b.height, "ssim: image size mismatch");
  double s = 0;
  for (int c = 0; c < 3; ++c) s += ssim_plane(plane(a, c), plane(b, c), a.width, a.height, 0.0, nullptr);
  return s / 3.0;
}

VisualLoss visual_loss(const Image& rendered, const Image& target, double w_ssim, bool with_grad) {
  require(rendered.width == target.width && rendered.height == target.height &&
              rendered.rgb.size() == target.rgb.size(),
          "visual_loss: image size mismatch");
  VisualLoss out;
  const std::size_t n = rendered.rgb.size();
  if (n == 0) return out;
  if (with_grad) out.grad = Image(rendered.width, rendered.height);
  double l1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rendered.rgb[i] - target.rgb[i];
    l1 += std::abs(d);
    if (with_grad) out.grad.rgb[i] = (1.0 - w_ssim) * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<double>(n);
  }
  out.l1 = l1 / static_cast<double>(n);
  double s = 0;
  std::vector<double> dx;
  for (int c = 0; c < 3; ++c) {
    s += ssim_plane(plane(rendered, c), plane(target, c), rendered.width, rendered.height, -w_ssim / 3.0,
                    with_grad ? &dx : nullptr);
    if (with_grad)
      for (std::size_t i = 0; i < dx.size(); ++i) out.grad.rgb[3 * i + static_cast<std::size_t>(c)] += dx[i];
  }
  out.ssim = s / 3.0;
  out.loss = (1.0 - w_ssim) * out.l1 + w_ssim * (1.0 - out.ssim);
  return out;
}

// -- PNG -----------------------------------------------------------------------

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ParseError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < out.rgb.size(); ++i) out.rgb[i] = buf[i] / 255.0;
  return out;
}

void write_png(const Image& im, const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(im.rgb.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(im.rgb[i], 0.0, 1.0) * 255.0));
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace pgs
