#include "pgs/grid.hpp"

#include "pgs/common.hpp"

#include "json.hpp"

#include <fstream>

namespace pgs {

void validate(const GridSpec& spec) {
  for (int d : spec.dims)
    if (d < 1) throw InvalidParameter("grid dims must be >= 1");
  if (!(spec.h > 0)) throw InvalidParameter("grid spacing h must be positive");
}

void dump_field(const GridSpec& spec, std::span<const double> values, const std::string& field_name,
                const std::filesystem::path& raw_path) {
  require(values.size() == spec.cell_count(), "dump_field: value count does not match grid");
  std::vector<float> f(values.begin(), values.end());
  std::ofstream out(raw_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + raw_path.string());
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  nlohmann::json meta = {{"dims", spec.dims},
                         {"h", spec.h},
                         {"origin", {spec.origin[0], spec.origin[1], spec.origin[2]}},
                         {"field_name", field_name}};
  std::ofstream side(raw_path.string() + ".json");
  side << meta.dump(2) << "\n";
}

FieldDump read_field_dump(const std::filesystem::path& raw_path) {
  std::ifstream side(raw_path.string() + ".json");
  if (!side) throw ParseError("missing sidecar for " + raw_path.string());
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
  FieldDump d;
  try {
    d.spec.dims = meta.at("dims").get<std::array<int, 3>>();
    d.spec.h = meta.at("h").get<double>();
    const auto o = meta.at("origin").get<std::array<double, 3>>();
    d.spec.origin = Vec3(o[0], o[1], o[2]);
    d.field_name = meta.at("field_name").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("field sidecar: ") + e.what());
  }
  d.values.resize(d.spec.cell_count());
  std::ifstream in(raw_path, std::ios::binary);
  in.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(d.values.size() * sizeof(float)));
  if (!in) throw ParseError("field dump shorter than its sidecar dims");
  return d;
}

}  // namespace pgs
