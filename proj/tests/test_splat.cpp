#include "doctest.h"
#include "test_util.hpp"

#include "pgs/adjoint.hpp"
#include "pgs/common.hpp"
#include "pgs/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace pgs;
using pgs::testing::rel_err;

namespace {

/// Camera on the +z axis looking at the origin; the optical axis hits the
/// center of pixel (8, 8).
Camera axis_camera(double dist = 10.0, int w = 16, int h = 16) {
  Camera c = Camera::look_at(Vec3(0, 0, dist), Vec3::Zero(), Vec3::UnitY(), 50.0, w, h);
  c.cx = 8.5;
  c.cy = 8.5;
  return c;
}

GaussianSet flat(const std::vector<Vec3>& means, const std::vector<double>& alphas, const std::vector<Vec3>& colors,
                 double scale = 0.5) {
  GaussianSet s;
  s.resize(means.size(), 0);
  for (std::size_t i = 0; i < means.size(); ++i) {
    s.mean(i) = means[i];
    s.rotation(i) = quat::identity();
    s.log_scale(i) = Vec3::Constant(std::log(scale));
    s.opacity_logits[i] = logit(alphas[i]);
    for (int c = 0; c < 3; ++c) s.sh_at(i, c, 0) = colors[i][c] / kShC0;
  }
  return s;
}

Image sinusoid(bool second) {
  Image im(16, 12);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(x, y, c) = second ? 0.5 + 0.4 * std::cos(1.1 * x - 0.6 * y + 2 * c) : 0.5 + 0.4 * std::sin(0.7 * x + 1.3 * y + c);
  return im;
}

double weighted(const Image& im, const Image& w) { return std::inner_product(im.rgb.begin(), im.rgb.end(), w.rgb.begin(), 0.0); }

}  // namespace

TEST_CASE("spherical harmonics color") {
  std::vector<double> y(16);
  sh_basis(3, Vec3(0, 0, 1), y);
  CHECK(y[0] == doctest::Approx(0.28209479).epsilon(1e-8));
  CHECK(y[0] == kShC0);

  std::vector<double> white(3, 1.0 / kShC0);
  std::mt19937_64 rng(61);
  for (int k = 0; k < 10; ++k) {
    const Vec3 dir = pgs::testing::random_unit_quat(rng).head<3>().normalized();
    CHECK((sh_color(white, 0, dir) - Vec3::Ones()).norm() < 1e-15);
  }

  // Degree 1, coefficient layout [c][k]; only the z-linear term besides a gray DC.
  std::vector<double> c(12, 0.0);
  for (int ch = 0; ch < 3; ++ch) {
    c[ch * 4 + 0] = 0.5 / kShC0;
    c[ch * 4 + 2] = 0.3;
  }
  const Vec3 up = sh_color(c, 1, Vec3(0, 0, 1)), down = sh_color(c, 1, Vec3(0, 0, -1));
  CHECK((up - down).norm() > 0.1);
  CHECK(up.x() - 0.5 == doctest::Approx(0.5 - down.x()).epsilon(1e-14));

  std::vector<double> bright(3, 5.0), dark(3, -5.0);
  CHECK(sh_color(bright, 0, Vec3::UnitX()) == Vec3::Ones());
  CHECK(sh_color(dark, 0, Vec3::UnitX()) == Vec3::Zero());
}

TEST_CASE("projection of an on-axis Gaussian") {
  const Camera cam = axis_camera(10.0);
  const double sigma = 0.4;
  const GaussianSet s = flat({Vec3(0, 0, 0)}, {0.8}, {Vec3(1, 1, 1)}, sigma);
  const auto g = project_gaussian(s, 0, cam);
  REQUIRE(g);
  const double f = cam.fx, z = 10.0;
  const double want = (f * sigma / z) * (f * sigma / z) + kDilation;
  CHECK(g->cov2d(0, 0) == doctest::Approx(want).epsilon(1e-12));
  CHECK(g->cov2d(1, 1) == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::abs(g->cov2d(0, 1)) < 1e-12);
  CHECK((g->mean2d - Vec2(8.5, 8.5)).norm() < 1e-12);
  CHECK(g->depth == doctest::Approx(10.0));
  CHECK(g->cov2d.eigenvalues().real().minCoeff() >= kDilation - 1e-12);

  // Twice as far: projected std (without the dilation floor) halves.
  const auto far = project_gaussian(s, 0, axis_camera(20.0));
  REQUIRE(far);
  CHECK(std::sqrt(far->cov2d(0, 0) - kDilation) == doctest::Approx(0.5 * std::sqrt(g->cov2d(0, 0) - kDilation)).epsilon(1e-12));

  const GaussianSet behind = flat({Vec3(0, 0, 12)}, {0.8}, {Vec3(1, 1, 1)});
  CHECK_FALSE(project_gaussian(behind, 0, cam));
  const GaussianSet aside = flat({Vec3(40, 0, 0)}, {0.8}, {Vec3(1, 1, 1)}, 0.1);
  CHECK_FALSE(project_gaussian(aside, 0, cam));
}

TEST_CASE("compositing") {
  const Camera cam = axis_camera();
  GaussianSet empty;
  empty.resize(0, 0);
  const RenderTarget e = render(empty, cam);
  CHECK(std::all_of(e.image.rgb.begin(), e.image.rgb.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(e.transmittance.begin(), e.transmittance.end(), [](double v) { return v == 1.0; }));

  // Opacity at the numerical ceiling: alpha * G = 1 at the mean's pixel.
  GaussianSet solid = flat({Vec3::Zero()}, {0.5}, {Vec3(0.2, 0.6, 0.9)});
  solid.opacity_logits[0] = 40.0;
  const RenderTarget one = render(solid, cam);
  CHECK(one.image.at(8, 8, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(one.image.at(8, 8, 2) == doctest::Approx(0.9).epsilon(1e-12));

  // Red at alpha*G = 0.5 in front of opaque blue.
  GaussianSet pair = flat({Vec3(0, 0, 2), Vec3(0, 0, -2)}, {0.5, 0.5}, {Vec3(1, 0, 0), Vec3(0, 0, 1)});
  pair.opacity_logits[1] = 40.0;
  const RenderTarget two = render(pair, cam);
  CHECK(two.image.at(8, 8, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(two.image.at(8, 8, 1) == 0.0);
  CHECK(two.image.at(8, 8, 2) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("compositing weights and final transmittance sum to one") {
  std::mt19937_64 rng(62);
  GaussianSet s = pgs::testing::random_set(30, rng, -3, 3, 0.3, 1.0, 0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (int c = 0; c < 3; ++c) s.sh_at(i, c, 0) = 1.0 / kShC0;
  const Camera cam = Camera::look_at(Vec3(9, 4, 6), Vec3::Zero(), Vec3::UnitZ(), 45, 32, 24);
  const RenderTarget rt = render(s, cam);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) {
      const double T = rt.transmittance[static_cast<std::size_t>(y) * 32 + x];
      CHECK(T >= 0.0);
      CHECK(T <= 1.0);
      CHECK(rt.image.at(x, y, 0) + T == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("render is invariant to storage order") {
  std::mt19937_64 rng(63);
  const GaussianSet s = pgs::testing::random_set(20, rng, -3, 3, 0.3, 1.0, 2);
  std::vector<std::size_t> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  GaussianSet p;
  p.resize(s.size(), s.sh_degree);
  for (std::size_t i = 0; i < s.size(); ++i) {
    p.mean(i) = s.mean(perm[i]);
    p.rotation(i) = s.rotation(perm[i]);
    p.log_scale(i) = s.log_scale(perm[i]);
    p.opacity_logits[i] = s.opacity_logits[perm[i]];
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < s.coeffs(); ++k) p.sh_at(i, c, k) = s.sh_at(perm[i], c, k);
  }
  const Camera cam = Camera::look_at(Vec3(-7, 5, 4), Vec3::Zero(), Vec3::UnitZ(), 50, 40, 30);
  CHECK(render(p, cam).image == render(s, cam).image);
}

TEST_CASE("render gradients match central differences") {
  std::mt19937_64 rng(64);
  std::normal_distribution<double> nd(0.0, 1.0);
  const GaussianSet s = pgs::testing::random_set(4, rng, -1.5, 1.5, 0.6, 1.2, 1);
  const Camera cam = Camera::look_at(Vec3(0.5, -6, 3), Vec3::Zero(), Vec3::UnitZ(), 50, 16, 16);
  Image w(16, 16);
  for (double& v : w.rgb) v = nd(rng);
  GradBuffer g = GradBuffer::zeros_like(s);
  render_backward(render(s, cam), s, cam, w, g);
  GradCheckOptions o;
  o.eps = 1e-6;
  const GradReport rep = gradcheck([&](const GaussianSet& t) { return weighted(render(t, cam).image, w); }, s, g, o);
  const auto per_group = rep.group_max_rel();
  MESSAGE("render gradcheck max rel " << rep.max_rel);
  for (ParamGroup grp : {ParamGroup::Means, ParamGroup::OpacityLogits, ParamGroup::Sh})
    CHECK_MESSAGE(per_group[static_cast<std::size_t>(grp)] <= 1e-3, group_name(grp));
  CHECK(rep.max_rel <= 1e-3);
}

TEST_CASE("SSIM and the visual loss against the reference implementation") {
  const Image a = sinusoid(false), b = sinusoid(true);
  // Reference: numpy/scipy SSIM with the same window and constants.
  CHECK(ssim(a, b) == doctest::Approx(0.26160631227525905).epsilon(1e-12));
  const VisualLoss v = visual_loss(a, b);
  CHECK(v.loss == doctest::Approx(0.40561843715118745).epsilon(1e-12));
  CHECK(v.ssim == doctest::Approx(0.26160631227525905).epsilon(1e-12));

  const VisualLoss same = visual_loss(a, a);
  CHECK(std::abs(same.loss) < 1e-12);

  Image shifted = a;
  for (double& x : shifted.rgb) x += 0.1;
  CHECK(visual_loss(a, shifted).l1 == doctest::Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_AS(visual_loss(a, Image(15, 12)), ContractViolation);
}

TEST_CASE("uncorrelated noise images have SSIM near zero") {
  std::mt19937_64 rng(65);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(96, 96), b(96, 96);
  for (double& x : a.rgb) x = u(rng);
  for (double& x : b.rgb) x = u(rng);
  const VisualLoss v = visual_loss(a, b, 0.2, false);
  MESSAGE("noise SSIM " << v.ssim);
  CHECK(std::abs(v.ssim) < 0.05);
  CHECK(v.loss == doctest::Approx(0.8 * v.l1 + 0.2).epsilon(0.02));
}

TEST_CASE("visual loss gradient matches central differences") {
  const Image a = sinusoid(false), b = sinusoid(true);
  const VisualLoss v = visual_loss(a, b);
  REQUIRE(v.grad.rgb.size() == a.rgb.size());
  std::mt19937_64 rng(66);
  std::uniform_int_distribution<std::size_t> pick(0, a.rgb.size() - 1);
  for (int k = 0; k < 40; ++k) {
    const std::size_t i = pick(rng);
    const double eps = 1e-6;
    Image p = a, m = a;
    p.rgb[i] += eps;
    m.rgb[i] -= eps;
    const double fd = (visual_loss(p, b, 0.2, false).loss - visual_loss(m, b, 0.2, false).loss) / (2 * eps);
    CHECK(rel_err(v.grad.rgb[i], fd, 1e-8) < 1e-5);
  }
}

TEST_CASE("PNG round trip quantizes to 8 bits") {
  const auto dir = pgs::testing::scratch_dir("png");
  Image im = sinusoid(false);
  im.at(0, 0, 0) = 1.7;
  im.at(1, 0, 0) = -0.2;
  write_png(im, dir / "a.png");
  const Image back = read_png(dir / "a.png");
  REQUIRE(back.width == 16);
  REQUIRE(back.height == 12);
  for (std::size_t i = 0; i < im.rgb.size(); ++i) {
    const double q = std::round(std::clamp(im.rgb[i], 0.0, 1.0) * 255.0) / 255.0;
    CHECK(back.rgb[i] == doctest::Approx(q).epsilon(1e-12));
  }
  CHECK_THROWS(read_png(dir / "missing.png"));
}
