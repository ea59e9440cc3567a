#include "doctest.h"
#include "test_util.hpp"

#include "pgs/common.hpp"
#include "pgs/quaternion.hpp"
#include "pgs/scene.hpp"
#include "pgs/scene_io.hpp"

#include <Eigen/Eigenvalues>

#include <fstream>
#include <numbers>
#include <sstream>

using namespace pgs;
using pgs::testing::random_set;

namespace {

Vec4 about_z(double deg) { return quat::from_axis_angle(Vec3::UnitZ(), deg * std::numbers::pi / 180.0); }

double max_diff(const Mat3& a, const Mat3& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("covariance of the identity rotation is diagonal in the squared scales") {
  CHECK(max_diff(covariance(quat::identity(), Vec3(1, 1, 1)), Mat3::Identity()) == 0.0);
  const Mat3 want = Vec3(4, 1, 9).asDiagonal();
  CHECK(max_diff(covariance(quat::identity(), Vec3(2, 1, 3)), want) == 0.0);
}

TEST_CASE("covariance under a quarter turn about z swaps the x and y variances") {
  // Dense rotation-conjugation oracle: R diag(4,1,1) R^T = diag(1,4,1).
  const Mat3 want = Vec3(1, 4, 1).asDiagonal();
  CHECK(max_diff(covariance(about_z(90), Vec3(2, 1, 1)), want) < 1e-14);
}

TEST_CASE("inverse covariance") {
  CHECK(max_diff(inverse_covariance(quat::identity(), Vec3(1, 1, 1)), Mat3::Identity()) == 0.0);
  const Mat3 want = Vec3(0.25, 1.0, 1.0 / 9.0).asDiagonal();
  CHECK(max_diff(inverse_covariance(quat::identity(), Vec3(2, 1, 3)), want) < 1e-15);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  for (int k = 0; k < 100; ++k) {
    const Vec4 q = pgs::testing::random_unit_quat(rng);
    const Vec3 s(u(rng), u(rng), u(rng));
    const Mat3 cov = covariance(q, s);
    CHECK(max_diff(cov * inverse_covariance(q, s), Mat3::Identity()) < 1e-9);
    CHECK(max_diff(cov, cov.transpose()) < 1e-12);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues().minCoeff();
    CHECK(min_eig >= s.minCoeff() * s.minCoeff() * (1 - 1e-9));
  }
}

TEST_CASE("covariance rejects non-unit quaternions and non-positive scales") {
  CHECK_THROWS_AS(covariance(Vec4(1.1, 0, 0, 0), Vec3(1, 1, 1)), InvalidParameter);
  CHECK_THROWS_AS(inverse_covariance(Vec4(0.5, 0, 0, 0), Vec3(1, 1, 1)), InvalidParameter);
  CHECK_THROWS_AS(covariance(quat::identity(), Vec3(1, 0, 1)), InvalidParameter);
  CHECK_NOTHROW(covariance(Vec4(1 + 5e-7, 0, 0, 0), Vec3(1, 1, 1)));
}

TEST_CASE("covariance Jacobians match central differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  const double eps = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec4 q = pgs::testing::random_unit_quat(rng);
    const Vec3 ls(0.3 * n(rng), 0.3 * n(rng), 0.3 * n(rng));
    Mat3 w;
    for (int i = 0; i < 9; ++i) w(i) = n(rng);
    auto f_cov = [&](const Vec4& qq, const Vec3& l) { return (w.cwiseProduct(covariance_raw(qq, l.array().exp().matrix()))).sum(); };
    auto f_inv = [&](const Vec4& qq, const Vec3& l) {
      return (w.cwiseProduct(inverse_covariance_raw(qq, l.array().exp().matrix()))).sum();
    };
    Vec4 dq_c, dq_i;
    Vec3 dl_c, dl_i;
    covariance_vjp(q, ls, w, dq_c, dl_c);
    inverse_covariance_vjp(q, ls, w, dq_i, dl_i);
    for (int k = 0; k < 4; ++k) {
      Vec4 e = Vec4::Zero();
      e[k] = eps;
      CHECK(pgs::testing::rel_err(dq_c[k], (f_cov(q + e, ls) - f_cov(q - e, ls)) / (2 * eps), 1e-8) < 1e-5);
      CHECK(pgs::testing::rel_err(dq_i[k], (f_inv(q + e, ls) - f_inv(q - e, ls)) / (2 * eps), 1e-8) < 1e-5);
    }
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = eps;
      CHECK(pgs::testing::rel_err(dl_c[k], (f_cov(q, ls + e) - f_cov(q, ls - e)) / (2 * eps), 1e-8) < 1e-5);
      CHECK(pgs::testing::rel_err(dl_i[k], (f_inv(q, ls + e) - f_inv(q, ls - e)) / (2 * eps), 1e-8) < 1e-5);
    }
  }
}

TEST_CASE("parameter transforms keep scales positive and opacities inside (0,1)") {
  GaussianSet s;
  s.resize(3, 1);
  s.opacity_logits = {-40.0, 0.0, 40.0};
  for (std::size_t i = 0; i < 3; ++i) {
    s.rotation(i) = Vec4(2, 0, 0, 0);
    s.log_scale(i) = Vec3(-50, 0, 50);
    CHECK(opacity(s, i) > 0.0);
    CHECK(opacity(s, i) < 1.0);
    CHECK((s.log_scale(i).array().exp() > 0).all());
  }
  CHECK(opacity(s, 1) == doctest::Approx(0.5));
  CHECK(logit(sigmoid(0.3)) == doctest::Approx(0.3).epsilon(1e-14));
  normalize_rotations(s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(s.rotation(i).norm() - 1.0) < 1e-12);
}

TEST_CASE("checkpoint round trip is bit exact in both encodings") {
  std::mt19937_64 rng(3);
  const auto dir = pgs::testing::scratch_dir("scene_io");
  for (int degree = 0; degree <= 3; ++degree) {
    const GaussianSet s = random_set(17, rng, -5, 5, 0.3, 2.0, degree);
    save_gaussians(s, dir / "b.ply");
    save_gaussians(s, dir / "a.ply", PlyFormat::Ascii);
    CHECK(load_gaussians(dir / "b.ply") == s);
    CHECK(load_gaussians(dir / "a.ply") == s);
  }
  GaussianSet empty;
  empty.resize(0, 1);
  save_gaussians(empty, dir / "empty.ply");
  const GaussianSet back = load_gaussians(dir / "empty.ply");
  CHECK(back.size() == 0);
  CHECK(back.sh_degree == 1);
}

TEST_CASE("checkpoint uses the common 3DGS attribute names") {
  std::mt19937_64 rng(4);
  const auto dir = pgs::testing::scratch_dir("scene_names");
  save_gaussians(random_set(2, rng, 0, 1), dir / "a.ply", PlyFormat::Ascii);
  std::ifstream in(dir / "a.ply");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const char* name : {"property double x", "rot_0", "rot_3", "scale_0", "scale_2", "opacity", "f_dc_0",
                           "f_dc_2", "f_rest_0", "f_rest_8"})
    CHECK(text.find(name) != std::string::npos);
}

TEST_CASE("malformed checkpoints raise parse errors") {
  std::mt19937_64 rng(5);
  const auto dir = pgs::testing::scratch_dir("scene_bad");
  save_gaussians(random_set(3, rng, 0, 1), dir / "a.ply", PlyFormat::Ascii);
  std::ifstream in(dir / "a.ply");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  };
  std::string wrong_count = text;
  wrong_count.replace(wrong_count.find("element vertex 3"), 16, "element vertex 4");
  CHECK_THROWS_AS(load_gaussians(write("count.ply", wrong_count)), ParseError);

  std::string no_opacity = text;
  no_opacity.replace(no_opacity.find("property double opacity"), 23, "property double opaque");
  try {
    load_gaussians(write("prop.ply", no_opacity));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("opacity") != std::string::npos);
  }
  CHECK_THROWS_AS(load_gaussians(write("magic.ply", "plx\n")), ParseError);
  CHECK_THROWS_AS(load_gaussians(dir / "missing.ply"), ParseError);
}

TEST_CASE("cameras round trip through JSON") {
  const auto dir = pgs::testing::scratch_dir("cameras");
  std::vector<Camera> cams = {Camera::look_at(Vec3(10, 2, 3), Vec3(0, 0, 0), Vec3::UnitZ(), 40, 64, 48),
                              Camera::look_at(Vec3(-3, 8, 1), Vec3(1, 1, 1), Vec3::UnitZ(), 55, 32, 32)};
  save_cameras(cams, dir / "c.json");
  const auto back = load_cameras(dir / "c.json");
  REQUIRE(back.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(max_diff(back[k].rotation, cams[k].rotation) < 1e-15);
    CHECK((back[k].translation - cams[k].translation).norm() < 1e-12);
    CHECK(back[k].fx == cams[k].fx);
    CHECK(back[k].width == cams[k].width);
    CHECK_NOTHROW(validate(back[k]));
  }
  Camera bad = cams[0];
  bad.rotation(0, 0) += 1e-3;
  CHECK_THROWS_AS(validate(bad), InvalidParameter);
  std::ofstream(dir / "bad.json") << "[{\"R\": [1,0,0], \"t\": [0,0,0]}]";
  CHECK_THROWS_AS(load_cameras(dir / "bad.json"), ParseError);
}

TEST_CASE("gradient buffers mirror the set layout") {
  std::mt19937_64 rng(6);
  const GaussianSet s = random_set(4, rng, 0, 1, 0.6, 1.2, 2);
  GradBuffer g = GradBuffer::zeros_like(s);
  CHECK(g.same_shape(s));
  CHECK(g.all_finite());
  for (auto grp : kAllGroups) CHECK(g.group_norm(grp) == 0.0);
  g.means[0] = 3.0;
  g.sh[5] = 4.0;
  GradBuffer h = g;
  h.add(g, 2.0);
  CHECK(h.group_norm(ParamGroup::Means) == doctest::Approx(9.0));
  CHECK(h.group_norm(ParamGroup::Sh) == doctest::Approx(12.0));
  h.means[1] = std::nan("");
  CHECK_FALSE(h.all_finite());
}
