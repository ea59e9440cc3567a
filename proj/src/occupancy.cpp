#include "pgs/occupancy.hpp"

#include "pgs/common.hpp"

#include <algorithm>
#include <cmath>

namespace pgs {

namespace {

// Beyond this exponent alpha*exp(-e) < 2^-54, so (1 - alpha_hat) rounds to 1
// exactly and skipping the term changes no bit of the product.
constexpr double kNegligibleExponent = 38.0;

struct Contribution {
  double value;    // clamped alpha_hat
  double gauss;    // exp(-1/2 m)
  bool clamped;
};

inline Contribution evaluate(const GaussianKernel& g, const Vec3& x) {
  const Vec3 d = x - g.mean;
  const double e = 0.5 * d.dot(g.inv_cov * d);
  if (e > kNegligibleExponent) return {0.0, 0.0, false};
  const double gauss = std::exp(-e);
  const double a = g.alpha * gauss;
  if (a >= 1.0 - kOccupancyEps) return {1.0 - kOccupancyEps, gauss, true};
  return {a, gauss, false};
}

struct TileRange {
  std::array<int, 3> lo, hi;  // inclusive cell ranges
};

TileRange tile_range(const OccupancyGrid& g, std::size_t t) {
  TileRange r;
  std::size_t rest = t;
  std::array<int, 3> tc;
  tc[0] = static_cast<int>(rest % static_cast<std::size_t>(g.tiles[0]));
  rest /= static_cast<std::size_t>(g.tiles[0]);
  tc[1] = static_cast<int>(rest % static_cast<std::size_t>(g.tiles[1]));
  tc[2] = static_cast<int>(rest / static_cast<std::size_t>(g.tiles[1]));
  for (int d = 0; d < 3; ++d) {
    r.lo[d] = tc[d] * g.tile;
    r.hi[d] = std::min(g.spec.dims[d], (tc[d] + 1) * g.tile) - 1;
  }
  return r;
}

OccupancyGrid make_layout(const GridSpec& spec, int tile, std::size_t n) {
  validate(spec);
  OccupancyGrid g;
  g.spec = spec;
  g.tile = tile;
  g.gaussian_count = n;
  for (int d = 0; d < 3; ++d) g.tiles[d] = (spec.dims[d] + tile - 1) / tile;
  g.contributors.resize(static_cast<std::size_t>(g.tiles[0]) * static_cast<std::size_t>(g.tiles[1]) *
                        static_cast<std::size_t>(g.tiles[2]));
  g.chi.assign(spec.cell_count(), 0.0);
  return g;
}

void evaluate_tiles(OccupancyGrid& g, const std::vector<GaussianKernel>& kernels) {
  parallel_for(static_cast<std::ptrdiff_t>(g.tile_count()), [&](std::ptrdiff_t t) {
    const auto& list = g.contributors[static_cast<std::size_t>(t)];
    if (list.empty()) return;
    const TileRange r = tile_range(g, static_cast<std::size_t>(t));
    for (int k = r.lo[2]; k <= r.hi[2]; ++k)
      for (int j = r.lo[1]; j <= r.hi[1]; ++j)
        for (int i = r.lo[0]; i <= r.hi[0]; ++i) {
          const Vec3 x = g.spec.center(i, j, k);
          double prod = 1.0;
          for (std::uint32_t gi : list) prod *= 1.0 - evaluate(kernels[gi], x).value;
          g.chi[g.spec.index(i, j, k)] = 1.0 - prod;
        }
  });
}

}  // namespace

std::vector<GaussianKernel> prepare_kernels(const GaussianSet& set) {
  std::vector<GaussianKernel> k(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Vec3 s = set.log_scale(i).array().exp();
    k[i] = {set.mean(i), inverse_covariance_raw(set.rotation(i), s), opacity(set, i)};
  }
  return k;
}

double gaussian_contribution(const GaussianKernel& g, const Vec3& x) { return evaluate(g, x).value; }

double gaussian_contribution(const GaussianSet& set, std::size_t i, const Vec3& x) {
  const Vec3 s = set.log_scale(i).array().exp();
  const GaussianKernel g{set.mean(i), inverse_covariance(set.rotation(i), s), opacity(set, i)};
  return evaluate(g, x).value;
}

OccupancyGrid dense_mask(const GaussianSet& set, const GridSpec& spec) {
  OccupancyGrid g = make_layout(spec, spec.longest_axis(), set.size());
  const auto kernels = prepare_kernels(set);
  auto& all = g.contributors[0];
  all.resize(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
  parallel_for(static_cast<std::ptrdiff_t>(spec.cell_count()), [&](std::ptrdiff_t c) {
    const Vec3 x = spec.center(static_cast<std::size_t>(c));
    double prod = 1.0;
    for (const GaussianKernel& k : kernels) prod *= 1.0 - evaluate(k, x).value;
    g.chi[static_cast<std::size_t>(c)] = 1.0 - prod;
  });
  return g;
}

OccupancyGrid tiled_mask(const GaussianSet& set, const GridSpec& spec, int tile, double kappa) {
  if (tile < 1) throw InvalidParameter("tile edge must be >= 1");
  if (!(kappa > 0)) throw InvalidParameter("kappa must be positive");
  OccupancyGrid g = make_layout(spec, tile, set.size());
  const auto kernels = prepare_kernels(set);
  const bool cull = std::isfinite(kappa);
  // Tiles are visited per Gaussian in ascending index order, so every list is sorted.
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::array<int, 3> tlo{0, 0, 0}, thi{g.tiles[0] - 1, g.tiles[1] - 1, g.tiles[2] - 1};
    if (cull) {
      const Mat3 cov = covariance_raw(set.rotation(i), set.log_scale(i).array().exp());
      bool empty = false;
      // Overlap of mu +- ext with the tile boxes bounded by cell faces, in
      // cell units (cell c spans [c - 1/2, c + 1/2]).
      for (int d = 0; d < 3; ++d) {
        const double ext = kappa * std::sqrt(cov(d, d));
        const double lo = (set.means[3 * i + d] - ext - spec.origin[d]) / spec.h + 0.5;
        const double hi = (set.means[3 * i + d] + ext - spec.origin[d]) / spec.h + 0.5;
        if (hi < 0 || lo > spec.dims[d]) {
          empty = true;
          break;
        }
        tlo[d] = static_cast<int>(std::floor(std::max(lo, 0.0))) / tile;
        thi[d] = std::min(static_cast<int>(std::floor(std::min(hi, static_cast<double>(spec.dims[d])))) / tile, g.tiles[d] - 1);
      }
      if (empty) continue;
    }
    for (int tz = tlo[2]; tz <= thi[2]; ++tz)
      for (int ty = tlo[1]; ty <= thi[1]; ++ty)
        for (int tx = tlo[0]; tx <= thi[0]; ++tx) {
          const std::size_t t = static_cast<std::size_t>(tx) +
                                static_cast<std::size_t>(g.tiles[0]) *
                                    (static_cast<std::size_t>(ty) + static_cast<std::size_t>(g.tiles[1]) * static_cast<std::size_t>(tz));
          g.contributors[t].push_back(static_cast<std::uint32_t>(i));
        }
  }
  evaluate_tiles(g, kernels);
  return g;
}

void mask_backward(const OccupancyGrid& grid, std::span<const double> dloss_dchi,
                   const GaussianSet& set, GradBuffer& grads) {
  require(dloss_dchi.size() == grid.spec.cell_count(), "mask_backward: cotangent size != cell count");
  require(grid.gaussian_count == set.size(), "mask_backward: grid built from a different GaussianSet");
  require(grads.same_shape(set), "mask_backward: GradBuffer shape mismatch");
  const auto kernels = prepare_kernels(set);

  // Per tile, per contributor: d mean (3), d logit (1), d Sigma^-1 (9).
  struct Partial {
    Vec3 dmean = Vec3::Zero();
    double dlogit = 0.0;
    Mat3 dinv = Mat3::Zero();
  };
  std::vector<std::vector<Partial>> partials(grid.tile_count());

  parallel_for(static_cast<std::ptrdiff_t>(grid.tile_count()), [&](std::ptrdiff_t tt) {
    const std::size_t t = static_cast<std::size_t>(tt);
    const auto& list = grid.contributors[t];
    if (list.empty()) return;
    auto& part = partials[t];
    part.assign(list.size(), Partial{});
    std::vector<Contribution> contrib(list.size());
    std::vector<double> suffix(list.size() + 1);
    const TileRange r = tile_range(grid, t);
    for (int k = r.lo[2]; k <= r.hi[2]; ++k)
      for (int j = r.lo[1]; j <= r.hi[1]; ++j)
        for (int i = r.lo[0]; i <= r.hi[0]; ++i) {
          const double g = dloss_dchi[grid.spec.index(i, j, k)];
          if (g == 0.0) continue;
          const Vec3 x = grid.spec.center(i, j, k);
          for (std::size_t n = 0; n < list.size(); ++n) contrib[n] = evaluate(kernels[list[n]], x);
          suffix[list.size()] = 1.0;
          for (std::size_t n = list.size(); n-- > 0;) suffix[n] = suffix[n + 1] * (1.0 - contrib[n].value);
          double prefix = 1.0;
          for (std::size_t n = 0; n < list.size(); ++n) {
            const Contribution& c = contrib[n];
            const double others = prefix * suffix[n + 1];
            prefix *= 1.0 - c.value;
            if (c.clamped || c.value == 0.0) continue;
            const GaussianKernel& ker = kernels[list[n]];
            const double da = g * others;  // d chi / d alpha_hat = prod_{m != n} (1 - alpha_hat_m)
            const Vec3 d = x - ker.mean;
            Partial& p = part[n];
            p.dlogit += da * c.value * (1.0 - ker.alpha);
            p.dmean += da * c.value * (ker.inv_cov * d);
            p.dinv += (-0.5 * da * c.value) * (d * d.transpose());
          }
        }
  });

  std::vector<Partial> total(set.size());
  for (std::size_t t = 0; t < grid.tile_count(); ++t) {
    const auto& list = grid.contributors[t];
    if (partials[t].empty()) continue;
    for (std::size_t n = 0; n < list.size(); ++n) {
      Partial& dst = total[list[n]];
      const Partial& src = partials[t][n];
      dst.dmean += src.dmean;
      dst.dlogit += src.dlogit;
      dst.dinv += src.dinv;
    }
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Partial& p = total[i];
    grads.mean(i) += p.dmean;
    grads.opacity_logits[i] += p.dlogit;
    Vec4 dq;
    Vec3 dls;
    inverse_covariance_vjp(set.rotation(i), set.log_scale(i), p.dinv, dq, dls);
    grads.rotation(i) += dq;
    grads.log_scale(i) += dls;
  }
}

}  // namespace pgs
