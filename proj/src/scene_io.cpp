#include "pgs/scene_io.hpp"

#include "pgs/common.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace pgs {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes little-endian host");

namespace {

std::vector<std::string> property_names(int sh_degree) {
  std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  const int rest = 3 * (sh_coeff_count(sh_degree) - 1);
  for (int k = 0; k < rest; ++k) names.push_back("f_rest_" + std::to_string(k));
  names.push_back("opacity");
  for (int k = 0; k < 3; ++k) names.push_back("scale_" + std::to_string(k));
  for (int k = 0; k < 4; ++k) names.push_back("rot_" + std::to_string(k));
  return names;
}

// One vertex record in property_names() order. f_rest is channel-major, as in 3DGS.
std::vector<double> record(const GaussianSet& set, std::size_t i) {
  std::vector<double> r;
  const int k = set.coeffs();
  for (int d = 0; d < 3; ++d) r.push_back(set.means[3 * i + d]);
  r.insert(r.end(), {0.0, 0.0, 0.0});
  for (int c = 0; c < 3; ++c) r.push_back(set.sh_at(i, c, 0));
  for (int c = 0; c < 3; ++c)
    for (int j = 1; j < k; ++j) r.push_back(set.sh_at(i, c, j));
  r.push_back(set.opacity_logits[i]);
  for (int d = 0; d < 3; ++d) r.push_back(set.log_scales[3 * i + d]);
  for (int d = 0; d < 4; ++d) r.push_back(set.rotations[4 * i + d]);
  return r;
}

struct Property {
  std::string name;
  bool is_double;
};

}  // namespace

void save_gaussians(const GaussianSet& set, const std::filesystem::path& path, PlyFormat format) {
  validate(set);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "ply\n"
      << (format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
      << "element vertex " << set.size() << "\n";
  for (const auto& name : property_names(set.sh_degree)) out << "property double " << name << "\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = record(set, i);
    if (format == PlyFormat::Ascii) {
      std::ostringstream line;
      line.precision(17);
      for (std::size_t j = 0; j < r.size(); ++j) line << (j ? " " : "") << r[j];
      out << line.str() << "\n";
    } else {
      out.write(reinterpret_cast<const char*>(r.data()),
                static_cast<std::streamsize>(r.size() * sizeof(double)));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

GaussianSet load_gaussians(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw ParseError("missing 'ply' magic");
  bool ascii = false;
  long long count = -1;
  std::vector<Property> props;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") ascii = true;
      else if (fmt != "binary_little_endian") throw ParseError("unsupported PLY format '" + fmt + "'");
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex && !(ls >> count)) throw ParseError("bad vertex element count");
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type != "float" && type != "double" && type != "float32" && type != "float64")
        throw ParseError("property '" + name + "' has unsupported type '" + type + "'");
      props.push_back({name, type == "double" || type == "float64"});
    } else if (kw == "element" || kw == "comment" || kw == "obj_info" || kw.empty()) {
    } else if (kw == "property") {
      throw ParseError("only the vertex element is supported");
    }
  }
  if (count < 0) throw ParseError("missing 'element vertex' line");

  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < props.size(); ++j) index[props[j].name] = j;
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ParseError("missing property '" + name + "'");
    return it->second;
  };
  std::size_t rest = 0;
  while (index.count("f_rest_" + std::to_string(rest))) ++rest;
  if (rest % 3 != 0) throw ParseError("f_rest_* count " + std::to_string(rest) + " is not a multiple of 3");
  int degree = -1;
  for (int l = 0; l <= kMaxShDegree; ++l)
    if (static_cast<std::size_t>(3 * (sh_coeff_count(l) - 1)) == rest) degree = l;
  if (degree < 0) throw ParseError("f_rest_* count " + std::to_string(rest) + " matches no SH degree <= 3");

  GaussianSet set;
  set.resize(static_cast<std::size_t>(count), degree);
  const int k = set.coeffs();
  std::vector<double> values(props.size());
  const std::array<std::size_t, 3> xyz = {column("x"), column("y"), column("z")};
  const std::array<std::size_t, 3> dc = {column("f_dc_0"), column("f_dc_1"), column("f_dc_2")};
  const std::size_t op = column("opacity");
  const std::array<std::size_t, 3> sc = {column("scale_0"), column("scale_1"), column("scale_2")};
  const std::array<std::size_t, 4> rot = {column("rot_0"), column("rot_1"), column("rot_2"), column("rot_3")};

  for (std::size_t i = 0; i < set.size(); ++i) {
    if (ascii) {
      if (!std::getline(in, line)) throw ParseError("vertex record " + std::to_string(i) + " missing (file has fewer than " + std::to_string(count) + ")");
      std::istringstream ls(line);
      for (std::size_t j = 0; j < props.size(); ++j)
        if (!(ls >> values[j]))
          throw ParseError("vertex record " + std::to_string(i) + ": bad value for '" + props[j].name + "'");
    } else {
      for (std::size_t j = 0; j < props.size(); ++j) {
        if (props[j].is_double) {
          in.read(reinterpret_cast<char*>(&values[j]), sizeof(double));
        } else {
          float f;
          in.read(reinterpret_cast<char*>(&f), sizeof(float));
          values[j] = f;
        }
        if (!in) throw ParseError("vertex record " + std::to_string(i) + " truncated at '" + props[j].name + "'");
      }
    }
    for (int d = 0; d < 3; ++d) set.means[3 * i + d] = values[xyz[d]];
    for (int c = 0; c < 3; ++c) set.sh_at(i, c, 0) = values[dc[c]];
    for (int c = 0; c < 3; ++c)
      for (int j = 1; j < k; ++j)
        set.sh_at(i, c, j) = values[column("f_rest_" + std::to_string(c * (k - 1) + (j - 1)))];
    set.opacity_logits[i] = values[op];
    for (int d = 0; d < 3; ++d) set.log_scales[3 * i + d] = values[sc[d]];
    for (int d = 0; d < 4; ++d) set.rotations[4 * i + d] = values[rot[d]];
  }
  if (ascii) {
    while (std::getline(in, line))
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw ParseError("extra data after " + std::to_string(count) + " vertex records");
  } else if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("extra data after " + std::to_string(count) + " vertex records");
  }
  try {
    validate(set);
  } catch (const InvalidParameter& e) {
    throw ParseError(e.what());
  }
  return set;
}

void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Camera& c : cams) {
    nlohmann::json r = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.push_back(c.rotation(i, j));
    arr.push_back({{"R", r},
                   {"t", {c.translation[0], c.translation[1], c.translation[2]}},
                   {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
                   {"width", c.width}, {"height", c.height}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << arr.dump(2) << "\n";
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("cameras: ") + e.what());
  }
  if (!arr.is_array()) throw ParseError("cameras file must hold a JSON array");
  std::vector<Camera> cams;
  for (std::size_t n = 0; n < arr.size(); ++n) {
    const auto& o = arr[n];
    const std::string where = "camera " + std::to_string(n);
    try {
      Camera c;
      const auto& r = o.at("R");
      const auto& t = o.at("t");
      if (r.size() != 9) throw ParseError(where + ": R must have 9 entries");
      if (t.size() != 3) throw ParseError(where + ": t must have 3 entries");
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) c.rotation(i, j) = r[3 * i + j].get<double>();
      for (int i = 0; i < 3; ++i) c.translation[i] = t[i].get<double>();
      c.fx = o.at("fx").get<double>();
      c.fy = o.at("fy").get<double>();
      c.cx = o.at("cx").get<double>();
      c.cy = o.at("cy").get<double>();
      c.width = o.at("width").get<int>();
      c.height = o.at("height").get<int>();
      validate(c);
      cams.push_back(c);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const InvalidParameter& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return cams;
}

}  // namespace pgs
