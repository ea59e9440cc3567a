#pragma once

#include "pgs/scene.hpp"

#include <filesystem>
#include <vector>

namespace pgs {

enum class PlyFormat { BinaryLittleEndian, Ascii };

/// Writes a 3DGS-style PLY (x,y,z, nx,ny,nz, f_dc_*, f_rest_*, opacity, scale_*, rot_*).
/// Values are stored as doubles, so save/load is bit-exact.
void save_gaussians(const GaussianSet& set, const std::filesystem::path& path,
                    PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Reads float or double properties in ascii or binary_little_endian layout.
/// Throws ParseError naming the offending property or record.
GaussianSet load_gaussians(const std::filesystem::path& path);

void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path);
std::vector<Camera> load_cameras(const std::filesystem::path& path);

}  // namespace pgs
