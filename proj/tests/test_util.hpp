#pragma once

#include "pgs/quaternion.hpp"
#include "pgs/scene.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace pgs::testing {

inline Vec4 random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

/// N Gaussians with means uniform in [lo, hi]^3, scales in [s_lo, s_hi], opacities in (0.2, 0.9).
inline GaussianSet random_set(std::size_t n, std::mt19937_64& rng, double lo, double hi, double s_lo = 0.6,
                              double s_hi = 1.2, int degree = 1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  GaussianSet s;
  s.resize(n, degree);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) {
      s.mean(i)[d] = lo + (hi - lo) * u(rng);
      s.log_scale(i)[d] = std::log(s_lo + (s_hi - s_lo) * u(rng));
    }
    s.rotation(i) = random_unit_quat(rng);
    s.opacity_logits[i] = logit(0.2 + 0.7 * u(rng));
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < s.coeffs(); ++k) s.sh_at(i, c, k) = (k == 0 ? 1.5 : 0.3) * nd(rng);
  }
  return s;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pgs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pgs::testing
