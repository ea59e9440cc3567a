#pragma once

#include "pgs/grid.hpp"
#include "pgs/scene.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace pgs {

/// Ceiling margin on a single Gaussian's contribution: alpha_hat <= 1 - eps.
inline constexpr double kOccupancyEps = 1e-4;
/// Pass as kappa to disable culling.
inline constexpr double kKappaInfinity = std::numeric_limits<double>::infinity();

struct MaskParams {
  int tile = 8;
  double kappa = 3.0;
};

/// Per-Gaussian quantities the occupancy kernel needs, computed once per pass.
struct GaussianKernel {
  Vec3 mean;
  Mat3 inv_cov;
  double alpha;
};

std::vector<GaussianKernel> prepare_kernels(const GaussianSet& set);

/// alpha * exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)), clamped to [0, 1 - eps].
double gaussian_contribution(const GaussianKernel& g, const Vec3& x);
double gaussian_contribution(const GaussianSet& set, std::size_t i, const Vec3& x);

/// Soft solid mask chi at cell centers plus the tile contributor lists the
/// backward pass replays.
struct OccupancyGrid {
  GridSpec spec;
  ScalarField chi;
  int tile = 1;                    // tile edge in cells
  std::array<int, 3> tiles{1, 1, 1};  // tile counts per axis
  std::size_t gaussian_count = 0;
  std::vector<std::vector<std::uint32_t>> contributors;  // per tile, ascending index

  std::size_t tile_count() const { return contributors.size(); }
};

/// Probabilistic union over all Gaussians at every cell center, ascending index order.
OccupancyGrid dense_mask(const GaussianSet& set, const GridSpec& spec);

/// Same union restricted per tile to Gaussians whose mu +- kappa*sqrt(diag Sigma)
/// box reaches the tile. kappa = kKappaInfinity reproduces dense_mask bitwise.
OccupancyGrid tiled_mask(const GaussianSet& set, const GridSpec& spec, int tile, double kappa);
inline OccupancyGrid tiled_mask(const GaussianSet& set, const GridSpec& spec, const MaskParams& p) {
  return tiled_mask(set, spec, p.tile, p.kappa);
}

/// Accumulates dL/d(means, rotations, log_scales, opacity_logits) into grads.
void mask_backward(const OccupancyGrid& grid, std::span<const double> dloss_dchi,
                   const GaussianSet& set, GradBuffer& grads);

}  // namespace pgs
