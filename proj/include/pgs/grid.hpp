#pragma once

#include "pgs/scene.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pgs {

/// Regular voxel grid; `origin` is the world position of the center of cell (0,0,0).
struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};
  double h = 1.0;
  Vec3 origin = Vec3::Zero();

  std::size_t cell_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  /// x-fastest linear index.
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  std::array<int, 3> coords(std::size_t idx) const {
    const int i = static_cast<int>(idx % static_cast<std::size_t>(dims[0]));
    const std::size_t rest = idx / static_cast<std::size_t>(dims[0]);
    return {i, static_cast<int>(rest % static_cast<std::size_t>(dims[1])),
            static_cast<int>(rest / static_cast<std::size_t>(dims[1]))};
  }
  Vec3 center(int i, int j, int k) const { return origin + h * Vec3(i, j, k); }
  Vec3 center(std::size_t idx) const {
    const auto c = coords(idx);
    return center(c[0], c[1], c[2]);
  }
  int longest_axis() const { return std::max(dims[0], std::max(dims[1], dims[2])); }
  bool operator==(const GridSpec&) const = default;
};

/// Throws InvalidParameter unless dims >= 1 and h > 0.
void validate(const GridSpec& spec);

using ScalarField = std::vector<double>;

/// Three scalar components at cell centers.
struct VectorField {
  std::array<ScalarField, 3> c;

  VectorField() = default;
  explicit VectorField(std::size_t n) { resize(n); }
  void resize(std::size_t n) {
    for (auto& comp : c) comp.assign(n, 0.0);
  }
  std::size_t size() const { return c[0].size(); }
  Vec3 at(std::size_t i) const { return {c[0][i], c[1][i], c[2][i]}; }
  void set(std::size_t i, const Vec3& v) {
    c[0][i] = v[0];
    c[1][i] = v[1];
    c[2][i] = v[2];
  }
  static VectorField constant(std::size_t n, const Vec3& v) {
    VectorField f(n);
    for (int d = 0; d < 3; ++d) f.c[d].assign(n, v[d]);
    return f;
  }
  bool operator==(const VectorField&) const = default;
};

/// Raw little-endian f32 array (x-fastest) plus `<path>.json` sidecar
/// {dims, h, origin, field_name}.
void dump_field(const GridSpec& spec, std::span<const double> values, const std::string& field_name,
                const std::filesystem::path& raw_path);

struct FieldDump {
  GridSpec spec;
  std::string field_name;
  std::vector<float> values;
};
FieldDump read_field_dump(const std::filesystem::path& raw_path);

}  // namespace pgs
