#include "pgs/common.hpp"
#include "pgs/occupancy.hpp"
#include "pgs/optimize.hpp"
#include "pgs/scenario.hpp"
#include "pgs/scene_io.hpp"
#include "pgs/splat.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <map>
#include <string>

namespace py = pybind11;
using namespace pgs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array a(shape);
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

void from_array(std::vector<double>& dst, const Array& a, const char* name) {
  if (static_cast<std::size_t>(a.size()) != dst.size())
    throw InvalidParameter(std::string(name) + ": expected " + std::to_string(dst.size()) + " values, got " +
                           std::to_string(a.size()));
  std::copy(a.data(), a.data() + a.size(), dst.begin());
}

Array image_array(const Image& img) { return to_array(img.rgb, {img.height, img.width, 3}); }

Image array_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw InvalidParameter("image must have shape (H, W, 3)");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
  return img;
}

template <class T>
py::ssize_t n_of(const GaussianArrays<T>& s) {
  return static_cast<py::ssize_t>(s.size());
}

template <class T>
py::dict group_dict(const GaussianArrays<T>& s) {
  const py::ssize_t n = n_of(s);
  py::dict d;
  d["means"] = to_array(s.means, {n, 3});
  d["rotations"] = to_array(s.rotations, {n, 4});
  d["log_scales"] = to_array(s.log_scales, {n, 3});
  d["opacity_logits"] = to_array(s.opacity_logits, {n});
  d["sh"] = to_array(s.sh, {n, 3, s.coeffs()});
  return d;
}

ScenarioConfig config_of(const std::string& doc, const std::map<std::string, std::string>& overrides) {
  return resolve_config(nlohmann::json::parse(doc), {overrides.begin(), overrides.end()});
}

}  // namespace

PYBIND11_MODULE(_pgs, m) {
  m.doc() = "Gaussian scenes optimized against rendered views and a coupled fluid/rigid simulation.";
  m.attr("__version__") = PGS_VERSION;

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<SolverFailure>(m, "SolverFailure", PyExc_RuntimeError);
  py::register_exception<DegenerateScenario>(m, "DegenerateScenario", PyExc_RuntimeError);

  py::class_<GaussianSet>(m, "GaussianSet")
      .def(py::init([](std::size_t n, int degree) {
             GaussianSet s;
             s.resize(n, degree);
             for (std::size_t i = 0; i < n; ++i) s.rotation(i) = Vec4(1, 0, 0, 0);
             return s;
           }),
           py::arg("n") = 0, py::arg("sh_degree") = 1)
      .def("__len__", &GaussianSet::size)
      .def_readonly("sh_degree", &GaussianSet::sh_degree)
      .def_property(
          "means", [](const GaussianSet& s) { return to_array(s.means, {n_of(s), 3}); },
          [](GaussianSet& s, const Array& a) { from_array(s.means, a, "means"); })
      .def_property(
          "rotations", [](const GaussianSet& s) { return to_array(s.rotations, {n_of(s), 4}); },
          [](GaussianSet& s, const Array& a) { from_array(s.rotations, a, "rotations"); })
      .def_property(
          "log_scales", [](const GaussianSet& s) { return to_array(s.log_scales, {n_of(s), 3}); },
          [](GaussianSet& s, const Array& a) { from_array(s.log_scales, a, "log_scales"); })
      .def_property(
          "opacity_logits", [](const GaussianSet& s) { return to_array(s.opacity_logits, {n_of(s)}); },
          [](GaussianSet& s, const Array& a) { from_array(s.opacity_logits, a, "opacity_logits"); })
      .def_property(
          "sh", [](const GaussianSet& s) { return to_array(s.sh, {n_of(s), 3, s.coeffs()}); },
          [](GaussianSet& s, const Array& a) { from_array(s.sh, a, "sh"); })
      .def("validate", [](const GaussianSet& s) { validate(s); });

  m.def("load_gaussians", &load_gaussians, py::arg("path"));
  m.def(
      "save_gaussians", [](const GaussianSet& s, const std::filesystem::path& p) { save_gaussians(s, p); },
      py::arg("set"), py::arg("path"));

  py::class_<Camera>(m, "Camera")
      .def_static(
          "look_at",
          [](const Array& eye, const Array& target, const Array& up, double fov, int w, int h) {
            auto v = [](const Array& a) {
              if (a.size() != 3) throw InvalidParameter("expected a 3-vector");
              return Vec3(a.data()[0], a.data()[1], a.data()[2]);
            };
            return Camera::look_at(v(eye), v(target), v(up), fov, w, h);
          },
          py::arg("eye"), py::arg("target"), py::arg("up"), py::arg("fov_y_deg"), py::arg("width"), py::arg("height"))
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height)
      .def_readonly("fx", &Camera::fx)
      .def_readonly("fy", &Camera::fy)
      .def_readonly("cx", &Camera::cx)
      .def_readonly("cy", &Camera::cy);

  m.def("load_cameras", &load_cameras, py::arg("path"));

  m.def(
      "render", [](const GaussianSet& s, const Camera& cam) { return image_array(render(s, cam).image); },
      py::arg("set"), py::arg("camera"), "Composited RGB image of shape (H, W, 3).");
  m.def(
      "ssim", [](const Array& a, const Array& b) { return ssim(array_image(a), array_image(b)); }, py::arg("a"),
      py::arg("b"));

  m.def(
      "occupancy",
      [](const GaussianSet& s, std::array<int, 3> dims, double h, std::array<double, 3> origin, int tile, double kappa) {
        GridSpec g;
        g.dims = dims;
        g.h = h;
        g.origin = Vec3(origin[0], origin[1], origin[2]);
        const OccupancyGrid o = tiled_mask(s, g, tile, kappa);
        return to_array(o.chi, {dims[2], dims[1], dims[0]});
      },
      py::arg("set"), py::arg("dims"), py::arg("h") = 1.0, py::arg("origin") = std::array<double, 3>{0, 0, 0},
      py::arg("tile") = 8, py::arg("kappa") = 3.0, "Soft occupancy on the grid, indexed [z, y, x].");
  m.attr("KAPPA_INFINITY") = kKappaInfinity;

  m.def(
      "default_config", [](const std::string& gen) { return to_json(default_config(gen)).dump(); },
      py::arg("generator"));
  m.def(
      "resolve_config",
      [](const std::string& doc, const std::map<std::string, std::string>& overrides) {
        return to_json(config_of(doc, overrides)).dump();
      },
      py::arg("config"), py::arg("overrides") = std::map<std::string, std::string>{});

  py::class_<ScenarioBundle>(m, "Scenario")
      .def_property_readonly("ground_truth", [](const ScenarioBundle& b) { return b.ground_truth; })
      .def_property_readonly("initial", [](const ScenarioBundle& b) { return b.scenario.initial; })
      .def_property_readonly("cameras", [](const ScenarioBundle& b) { return b.scenario.cameras; })
      .def_property_readonly("targets",
                             [](const ScenarioBundle& b) {
                               py::list l;
                               for (const auto& img : b.scenario.targets) l.append(image_array(img));
                               return l;
                             })
      .def_property_readonly("config", [](const ScenarioBundle& b) { return to_json(b.config).dump(); });

  m.def(
      "build_scenario",
      [](const std::string& doc, const std::map<std::string, std::string>& overrides) {
        return build_scenario(config_of(doc, overrides));
      },
      py::arg("config"), py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "physics_loss",
      [](const ScenarioBundle& b, const GaussianSet& theta) {
        EvalRequest req;
        req.physics = true;
        LossTerms t;
        {
          py::gil_scoped_release release;
          t = evaluate(b.scenario, b.config.train, theta, req);
        }
        return py::make_tuple(t.phys, group_dict(t.g_phys));
      },
      py::arg("scenario"), py::arg("theta"), "Physics objective of theta and its adjoint gradient.");

  m.def(
      "train",
      [](const ScenarioBundle& b, const std::optional<std::filesystem::path>& out) {
        TrainOutput o;
        o.dir = out;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(b.scenario, b.config.train, o);
        }
        py::list rows;
        for (const auto& row : r.log.rows) {
          py::dict d;
          d["iter"] = row.iter;
          d["phase"] = row.phase;
          d["L_vis"] = row.l_vis;
          d["L_phys"] = row.l_phys;
          d["L_reg"] = row.l_reg;
          d["J"] = row.j;
          d["ssim"] = row.ssim;
          rows.append(d);
        }
        return py::make_tuple(r.final, rows);
      },
      py::arg("scenario"), py::arg("out_dir") = std::nullopt);
}
