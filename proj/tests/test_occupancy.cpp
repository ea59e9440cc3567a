#include "doctest.h"
#include "test_util.hpp"

#include "pgs/common.hpp"
#include "pgs/occupancy.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

using namespace pgs;
using pgs::testing::random_set;
using pgs::testing::rel_err;

namespace {

GridSpec cube(int n, double h = 1.0, Vec3 origin = Vec3::Zero()) {
  GridSpec g;
  g.dims = {n, n, n};
  g.h = h;
  g.origin = origin;
  return g;
}

GaussianSet single(const Vec3& mean, double scale, double alpha) {
  GaussianSet s;
  s.resize(1, 0);
  s.mean(0) = mean;
  s.rotation(0) = quat::identity();
  s.log_scale(0) = Vec3::Constant(std::log(scale));
  s.opacity_logits[0] = logit(alpha);
  return s;
}

GaussianSet concat(const std::vector<GaussianSet>& parts) {
  GaussianSet s;
  s.sh_degree = 0;
  for (const GaussianSet& p : parts) {
    s.means.insert(s.means.end(), p.means.begin(), p.means.end());
    s.rotations.insert(s.rotations.end(), p.rotations.begin(), p.rotations.end());
    s.log_scales.insert(s.log_scales.end(), p.log_scales.begin(), p.log_scales.end());
    s.opacity_logits.insert(s.opacity_logits.end(), p.opacity_logits.begin(), p.opacity_logits.end());
    s.sh.insert(s.sh.end(), p.sh.begin(), p.sh.end());
  }
  return s;
}

double max_abs_diff(const ScalarField& a, const ScalarField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double weighted(const ScalarField& chi, const ScalarField& w) {
  return std::inner_product(chi.begin(), chi.end(), w.begin(), 0.0);
}

}  // namespace

TEST_CASE("single Gaussian contribution") {
  const GaussianKernel half{Vec3(1, 2, 3), Mat3::Identity(), 0.5};
  CHECK(gaussian_contribution(half, Vec3(1, 2, 3)) == 0.5);

  // Scalar oracle: exp(-0.5) = 0.6065306597126334.
  const GaussianKernel unit{Vec3::Zero(), Mat3::Identity(), 1.0};
  CHECK(gaussian_contribution(unit, Vec3(1, 0, 0)) == doctest::Approx(0.6065306597126334).epsilon(1e-15));
  CHECK(gaussian_contribution(unit, Vec3::Zero()) == 1.0 - kOccupancyEps);

  const GaussianKernel none{Vec3::Zero(), Mat3::Identity(), 0.0};
  CHECK(gaussian_contribution(none, Vec3::Zero()) == 0.0);
  CHECK(gaussian_contribution(none, Vec3(0.3, -2, 1)) == 0.0);

  const GaussianSet s = single(Vec3(0, 0, 0), 2.0, 0.5);
  CHECK(gaussian_contribution(s, 0, Vec3(2, 0, 0)) == doctest::Approx(0.5 * std::exp(-0.5)).epsilon(1e-15));
}

TEST_CASE("dense mask arithmetic") {
  const GridSpec g = cube(4);
  GaussianSet empty;
  empty.resize(0, 0);
  const OccupancyGrid e = dense_mask(empty, g);
  CHECK(std::all_of(e.chi.begin(), e.chi.end(), [](double v) { return v == 0.0; }));

  const GaussianSet one = single(g.center(1, 2, 3), 0.5, 0.5);
  CHECK(dense_mask(one, g).chi[g.index(1, 2, 3)] == 0.5);

  CHECK(dense_mask(concat({one, one}), g).chi[g.index(1, 2, 3)] == 0.75);
}

TEST_CASE("chi stays in [0,1] and is zero in tiles without contributors") {
  std::mt19937_64 rng(21);
  GaussianSet s = random_set(40, rng, 2, 14, 0.3, 1.5);
  s.opacity_logits[3] = 30.0;  // saturates the clamp
  const GridSpec g = cube(24);
  const OccupancyGrid m = tiled_mask(s, g, 8, 3.0);
  for (double v : m.chi) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (std::size_t t = 0; t < m.tile_count(); ++t) {
    CHECK(std::is_sorted(m.contributors[t].begin(), m.contributors[t].end()));
    if (!m.contributors[t].empty()) continue;
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
      const auto ijk = g.coords(c);
      const std::size_t tt = static_cast<std::size_t>(ijk[0] / 8) + 3 * (ijk[1] / 8 + 3 * static_cast<std::size_t>(ijk[2] / 8));
      if (tt == t) CHECK(m.chi[c] == 0.0);
    }
  }
}

TEST_CASE("tiled mask with infinite kappa is bitwise equal to the dense mask") {
  std::mt19937_64 rng(22);
  for (int scene = 0; scene < 10; ++scene) {
    const GaussianSet s = random_set(30 + 5 * scene, rng, -2, 20, 0.3, 2.0);
    const GridSpec g = cube(18, 1.0, Vec3(0.5, -0.25, 0.0));
    const OccupancyGrid d = dense_mask(s, g);
    for (int tile : {1, 4, 7, 8, 32}) CHECK(tiled_mask(s, g, tile, kKappaInfinity).chi == d.chi);
  }
}

TEST_CASE("culling honors the kappa error bound") {
  std::mt19937_64 rng(23);
  const GaussianSet s = random_set(64, rng, 0, 31, 0.5, 2.5);
  const GridSpec g = cube(32);
  const double dev = max_abs_diff(tiled_mask(s, g, 8, 3.0).chi, dense_mask(s, g).chi);
  MESSAGE("kappa=3 max deviation on 64 Gaussians / 32^3: " << dev);
  CHECK(dev <= 64.0 * std::exp(-4.5));

  // Gaussians far inside their tiles lose nothing measurable to culling.
  std::vector<GaussianSet> parts;
  for (int t = 0; t < 8; ++t)
    parts.push_back(single(Vec3(3.5 + 8 * (t & 1), 3.5 + 8 * ((t >> 1) & 1), 3.5 + 8 * (t >> 2)), 0.4, 0.8));
  const GaussianSet inner = concat(parts);
  CHECK(max_abs_diff(tiled_mask(inner, cube(16), 8, 3.0).chi, dense_mask(inner, cube(16)).chi) <= 1e-6);
}

TEST_CASE("a Gaussian far from a tile is culled from it") {
  const GridSpec g = cube(16);
  const OccupancyGrid m = tiled_mask(single(Vec3(2, 2, 2), 0.5, 0.9), g, 8, 3.0);
  REQUIRE(m.tile_count() == 8);
  CHECK(m.contributors[0].size() == 1);
  for (std::size_t t = 1; t < 8; ++t) CHECK(m.contributors[t].empty());
  for (int k = 8; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) CHECK(m.chi[g.index(i, j, k)] == 0.0);

  // Entirely outside the grid: no tile at all.
  const OccupancyGrid out = tiled_mask(single(Vec3(-40, 2, 2), 0.5, 0.9), g, 8, 3.0);
  for (const auto& list : out.contributors) CHECK(list.empty());
}

TEST_CASE("a Gaussian smaller than a cell stays in its tile") {
  // The kappa box of this Gaussian contains no cell center.
  const GridSpec g = cube(16);
  const GaussianSet s = single(Vec3(3.5, 3.0, 3.0), 0.15, 0.9);
  const OccupancyGrid m = tiled_mask(s, g, 8, 3.0);
  CHECK(m.contributors[0].size() == 1);
  const double at = m.chi[g.index(3, 3, 3)];
  CHECK(at > 0.0);
  CHECK(at == dense_mask(s, g).chi[g.index(3, 3, 3)]);

  // On a tile face the Gaussian belongs to both tiles.
  const OccupancyGrid f = tiled_mask(single(Vec3(7.5, 3.0, 3.0), 0.15, 0.9), g, 8, 3.0);
  CHECK(f.contributors[0].size() == 1);
  CHECK(f.contributors[1].size() == 1);
}

TEST_CASE("tiled mask validates its arguments") {
  const GaussianSet s = single(Vec3::Zero(), 1.0, 0.5);
  CHECK_THROWS_AS(tiled_mask(s, cube(4), 0, 3.0), InvalidParameter);
  CHECK_THROWS_AS(tiled_mask(s, cube(4), 4, 0.0), InvalidParameter);
  GridSpec bad = cube(4);
  bad.h = 0.0;
  CHECK_THROWS_AS(tiled_mask(s, bad, 4, 3.0), InvalidParameter);
}

TEST_CASE("mask is invariant to storage order after index sorting") {
  std::mt19937_64 rng(24);
  const GaussianSet s = random_set(25, rng, 0, 12, 0.4, 1.6);
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
  }
  // Undo the shuffle by sorting back to the original indices.
  GaussianSet back;
  back.resize(s.size(), s.sh_degree);
  for (std::size_t i = 0; i < s.size(); ++i) {
    back.mean(perm[i]) = p.mean(i);
    back.rotation(perm[i]) = p.rotation(i);
    back.log_scale(perm[i]) = p.log_scale(i);
    back.opacity_logits[perm[i]] = p.opacity_logits[i];
  }
  const GridSpec g = cube(12);
  CHECK(dense_mask(back, g).chi == dense_mask(s, g).chi);
  CHECK(tiled_mask(back, g, 4, 3.0).chi == tiled_mask(s, g, 4, 3.0).chi);
  CHECK(max_abs_diff(dense_mask(p, g).chi, dense_mask(s, g).chi) < 1e-14);
}

TEST_CASE("chi is monotone in every opacity") {
  std::mt19937_64 rng(25);
  const GaussianSet s = random_set(12, rng, 0, 10, 0.5, 1.5);
  const GridSpec g = cube(10);
  const ScalarField base = tiled_mask(s, g, 4, 3.0).chi;
  for (std::size_t i = 0; i < s.size(); ++i) {
    GaussianSet t = s;
    t.opacity_logits[i] += 0.5;
    const ScalarField up = tiled_mask(t, g, 4, 3.0).chi;
    bool ok = true;
    for (std::size_t c = 0; c < up.size(); ++c) ok = ok && up[c] >= base[c];
    CHECK(ok);
  }
}

TEST_CASE("mask backward with a zero cotangent leaves gradients unchanged") {
  std::mt19937_64 rng(26);
  const GaussianSet s = random_set(6, rng, 0, 6, 0.5, 1.5);
  const GridSpec g = cube(6);
  const OccupancyGrid m = tiled_mask(s, g, 3, 3.0);
  GradBuffer grads = GradBuffer::zeros_like(s);
  grads.means[2] = 1.25;
  const GradBuffer before = grads;
  const ScalarField zero(g.cell_count(), 0.0);
  mask_backward(m, zero, s, grads);
  for (auto grp : kAllGroups) {
    const auto a = grads.group(grp);
    const auto b = before.group(grp);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  CHECK_THROWS_AS(mask_backward(m, ScalarField(3, 0.0), s, grads), ContractViolation);
  const GaussianSet other = random_set(7, rng, 0, 6);
  GradBuffer og = GradBuffer::zeros_like(other);
  CHECK_THROWS_AS(mask_backward(m, zero, other, og), ContractViolation);
}

TEST_CASE("single Gaussian single cell opacity gradient matches finite differences") {
  GridSpec g;
  g.dims = {1, 1, 1};
  GaussianSet s = single(Vec3(0.4, -0.3, 0.2), 0.8, 0.6);
  GradBuffer grads = GradBuffer::zeros_like(s);
  mask_backward(dense_mask(s, g), ScalarField{1.0}, s, grads);
  const double eps = 1e-6;
  auto chi = [&](double logit_v) {
    GaussianSet t = s;
    t.opacity_logits[0] = logit_v;
    return dense_mask(t, g).chi[0];
  };
  const double fd = (chi(s.opacity_logits[0] + eps) - chi(s.opacity_logits[0] - eps)) / (2 * eps);
  CHECK(rel_err(grads.opacity_logits[0], fd) < 1e-6);
}

TEST_CASE("mean gradient of an isotropic Gaussian points along the offset") {
  GridSpec g;
  g.dims = {1, 1, 1};
  const Vec3 mu(0.5, 0.2, -0.4);
  const GaussianSet s = single(mu, 1.0, 0.5);
  const Vec3 offset = g.center(0, 0, 0) - mu;
  for (double sign : {1.0, -1.0}) {
    GradBuffer grads = GradBuffer::zeros_like(s);
    mask_backward(dense_mask(s, g), ScalarField{sign}, s, grads);
    const Vec3 dm = grads.mean(0);
    // Moving the mean toward the cell raises chi.
    CHECK(dm.cross(offset).norm() < 1e-12 * offset.norm());
    CHECK(sign * dm.dot(offset) > 0.0);
  }
}

TEST_CASE("clamped contributions carry no gradient") {
  GridSpec g;
  g.dims = {1, 1, 1};
  GaussianSet s = single(Vec3::Zero(), 1.0, 0.5);
  s.opacity_logits[0] = 20.0;
  GradBuffer grads = GradBuffer::zeros_like(s);
  mask_backward(dense_mask(s, g), ScalarField{1.0}, s, grads);
  CHECK(dense_mask(s, g).chi[0] == 1.0 - kOccupancyEps);
  CHECK(grads.opacity_logits[0] == 0.0);
  CHECK(grads.mean(0).norm() == 0.0);
}

TEST_CASE("mask Jacobian-vector products match central differences") {
  std::mt19937_64 rng(27);
  std::normal_distribution<double> n(0.0, 1.0);
  const GridSpec g = cube(8);
  for (int trial = 0; trial < 4; ++trial) {
    const GaussianSet s = random_set(8, rng, 1, 6, 0.7, 1.8);
    ScalarField w(g.cell_count());
    for (double& v : w) v = n(rng);
    for (bool tiled : {false, true}) {
      auto mask = [&](const GaussianSet& t) { return tiled ? tiled_mask(t, g, 4, kKappaInfinity) : dense_mask(t, g); };
      GradBuffer grads = GradBuffer::zeros_like(s);
      mask_backward(mask(s), w, s, grads);
      for (ParamGroup grp : {ParamGroup::Means, ParamGroup::Rotations, ParamGroup::LogScales, ParamGroup::OpacityLogits}) {
        GaussianSet dir = s;
        for (double& v : dir.group(grp)) v = n(rng);
        const auto dv = dir.group(grp);
        const auto gv = grads.group(grp);
        const double analytic = std::inner_product(dv.begin(), dv.end(), gv.begin(), 0.0);
        const double eps = 1e-6;
        GaussianSet plus = s, minus = s;
        auto pp = plus.group(grp);
        auto mm = minus.group(grp);
        for (std::size_t k = 0; k < dv.size(); ++k) {
          pp[k] += eps * dv[k];
          mm[k] -= eps * dv[k];
        }
        const double fd = (weighted(mask(plus).chi, w) - weighted(mask(minus).chi, w)) / (2 * eps);
        CHECK_MESSAGE(rel_err(analytic, fd, 1e-8) < 1e-4, group_name(grp), " analytic ", analytic, " fd ", fd);
      }
    }
  }
}

TEST_CASE("tiled evaluation is much faster than dense on clustered scenes") {
  std::mt19937_64 rng(28);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GaussianSet s;
  s.resize(10000, 0);
  std::vector<Vec3> centers;
  for (int c = 0; c < 10; ++c) centers.emplace_back(8 + 48 * u(rng), 8 + 48 * u(rng), 8 + 48 * u(rng));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Vec3& c = centers[i % centers.size()];
    s.mean(i) = c + 3.0 * Vec3(n(rng), n(rng), n(rng));
    s.rotation(i) = pgs::testing::random_unit_quat(rng);
    s.log_scale(i) = Vec3::Constant(std::log(0.5 + 0.5 * u(rng)));
    s.opacity_logits[i] = logit(0.05 + 0.2 * u(rng));
  }
  const GridSpec g = cube(64);
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const OccupancyGrid tiled = tiled_mask(s, g, 8, 3.0);
  const auto t1 = clock::now();
  const OccupancyGrid dense = dense_mask(s, g);
  const auto t2 = clock::now();
  const double tt = std::chrono::duration<double>(t1 - t0).count();
  const double td = std::chrono::duration<double>(t2 - t1).count();
  MESSAGE("tiled " << tt << " s, dense " << td << " s, speedup " << td / tt);
  CHECK(td >= 5.0 * tt);
  CHECK(max_abs_diff(tiled.chi, dense.chi) <= 1e-2);
}
