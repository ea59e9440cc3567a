#include "pgs/scenario.hpp"

#include "pgs/common.hpp"
#include "pgs/quaternion.hpp"
#include "pgs/scene_io.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

namespace pgs {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw UsageError(std::string(what) + ": expected 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json box_json(const std::optional<Box>& b) {
  if (!b) return nullptr;
  return {{"lo", vec(b->lo)}, {"hi", vec(b->hi)}};
}

std::optional<Box> box_from(const json& j, const char* what) {
  if (j.is_null()) return std::nullopt;
  return Box{vec3(j.at("lo"), what), vec3(j.at("hi"), what)};
}

Box cell_box(const GridSpec& g, std::array<int, 3> lo, std::array<int, 3> hi) {
  // cell index ranges (inclusive) to a world box that captures exactly those centers
  Box b;
  for (int d = 0; d < 3; ++d) {
    b.lo[d] = g.origin[d] + g.h * (lo[static_cast<std::size_t>(d)] - 0.5);
    b.hi[d] = g.origin[d] + g.h * (hi[static_cast<std::size_t>(d)] + 0.5);
  }
  return b;
}

void set_color(GaussianSet& s, std::size_t i, const Vec3& rgb) {
  for (int c = 0; c < 3; ++c) {
    s.sh_at(i, c, 0) = rgb[c] / kShC0;
    for (int k = 1; k < s.coeffs(); ++k) s.sh_at(i, c, k) = 0.0;
  }
}

std::size_t push_gaussian(GaussianSet& s, const Vec3& mu, const Vec3& scale, double alpha, const Vec3& rgb,
                          const Vec4& q = quat::identity()) {
  const std::size_t i = s.size();
  s.means.insert(s.means.end(), {mu.x(), mu.y(), mu.z()});
  s.rotations.insert(s.rotations.end(), {q[0], q[1], q[2], q[3]});
  s.log_scales.insert(s.log_scales.end(), {std::log(scale.x()), std::log(scale.y()), std::log(scale.z())});
  s.opacity_logits.push_back(logit(alpha));
  s.sh.resize(s.sh.size() + 3 * static_cast<std::size_t>(s.coeffs()), 0.0);
  set_color(s, i, rgb);
  return i;
}

Vec3 mean_of_means(const GaussianSet& s) {
  Vec3 m = Vec3::Zero();
  for (std::size_t i = 0; i < s.size(); ++i) m += s.mean(i);
  return s.size() ? Vec3(m / static_cast<double>(s.size())) : m;
}

void check_keys(const json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.is_object() || !base.contains(it.key())) throw UsageError("unknown config key '" + path + "'");
    const json& b = base.at(it.key());
    if (b.is_object() && it.value().is_object()) check_keys(b, it.value(), path);
  }
}

/// Recursive merge where null is a value (merge_patch would erase the key).
void merge_into(json& base, const json& user) {
  if (!user.is_object() || !base.is_object()) {
    base = user;
    return;
  }
  for (auto it = user.begin(); it != user.end(); ++it) merge_into(base[it.key()], it.value());
}

void collect_paths(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object() && !j.empty()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      collect_paths(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out.push_back(prefix);
  }
}

}  // namespace

// -- configs -------------------------------------------------------------------

ScenarioConfig default_config(const std::string& generator) {
  ScenarioConfig c;
  c.generator = generator;
  c.name = generator;
  if (generator == "vessel") {
    c.grid.dims = {24, 24, 24};
    c.body.mode = BodyMode::Static;
    c.objective.kind = ObjectiveKind::PourOut;
    c.objective.region = cell_box(c.grid, {8, 8, 11}, {15, 15, 18});
    c.dye = cell_box(c.grid, {8, 8, 11}, {15, 15, 14});
    c.cameras.radius = 36.0;
    c.train.lambda_phys = 0.1;
    c.train.views_per_iter = 4;
    c.train.phys_every = 2;
  } else if (generator == "wing") {
    c.grid.dims = {32, 16, 16};
    c.grid.origin = {0.0, 0.0, -8.0};
    c.sim.gravity = Vec3::Zero();
    c.body.mode = BodyMode::Translating;
    // Heavy enough that the explicit reaction force stays stable (the
    // Brinkman-weighted fluid mass inside the slab is about 140).
    c.body.mass = 150.0;
    c.body.thrust = {300.0, 0.0, 0.0};
    c.body.gravity = {0.0, 0.0, -0.1};
    c.objective.kind = ObjectiveKind::Lift;
    c.cameras.radius = 24.0;
    c.train.lambda_phys = 0.01;
  } else if (generator == "toy") {
    c.grid.dims = {8, 8, 8};
    c.sim.gravity = Vec3::Zero();
    c.sim.cg_tol = 1e-12;
    c.body.mode = BodyMode::Translating;
    c.body.mass = 200.0;
    c.body.thrust = {200.0, 0.0, 0.0};
    c.body.gravity = {0.0, 0.0, -1.0};
    c.objective.kind = ObjectiveKind::Lift;
    c.cameras = CameraRig{2, 0, 14.0, 16, 16, 50.0, 10.0, 40.0};
    c.train.horizon = 3;
    c.train.iters_vis = 20;
    c.train.iters_joint = 20;
    c.train.lambda_phys = 0.1;
  } else if (generator == "from-files") {
    c.grid.dims = {24, 24, 24};
  } else {
    throw UsageError("unknown generator '" + generator + "' (vessel|wing|toy|from-files)");
  }
  c.objective.weight = c.train.lambda_phys;
  return c;
}

json to_json(const ScenarioConfig& c) {
  const TrainConfig& t = c.train;
  json inertia = nullptr;
  if (c.body.inertia) {
    inertia = json::array();
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) inertia.push_back((*c.body.inertia)(r, k));
  }
  return {
      {"name", c.name},
      {"generator", c.generator},
      {"grid", {{"dims", c.grid.dims}, {"h", c.grid.h}, {"origin", vec(c.grid.origin)}}},
      {"sim",
       {{"dt", c.sim.dt},
        {"lambda", c.sim.lambda},
        {"rho0", c.sim.rho0},
        {"gravity", vec(c.sim.gravity)},
        {"dye_buoyancy", c.sim.dye_buoyancy},
        {"cg_tol", c.sim.cg_tol},
        {"cg_max_iters", c.sim.cg_max_iters}}},
      {"mask", {{"tile", c.mask.tile}, {"kappa", c.mask.kappa}}},
      {"objective", {{"kind", std::string(to_string(c.objective.kind))}, {"region", box_json(c.objective.region)}}},
      {"body",
       {{"mode", std::string(to_string(c.body.mode))},
        {"mass", c.body.mass},
        {"inertia", inertia},
        {"thrust", vec(c.body.thrust)},
        {"gravity", vec(c.body.gravity)}}},
      {"cameras",
       {{"count", c.cameras.count},
        {"heldout", c.cameras.heldout},
        {"radius", c.cameras.radius},
        {"width", c.cameras.width},
        {"height", c.cameras.height},
        {"fov_deg", c.cameras.fov_deg},
        {"elevation_min", c.cameras.elevation_min},
        {"elevation_max", c.cameras.elevation_max}}},
      {"train",
       {{"iters_vis", t.iters_vis},
        {"iters_joint", t.iters_joint},
        {"lr",
         {{"means", t.lr.means},
          {"rotations", t.lr.rotations},
          {"log_scales", t.lr.log_scales},
          {"opacity_logits", t.lr.opacity_logits},
          {"sh", t.lr.sh}}},
        {"lambda_phys", t.lambda_phys},
        {"lambda_ramp", t.lambda_ramp},
        {"phys_every", t.phys_every},
        {"horizon", t.horizon},
        {"seed", t.seed},
        {"w_ssim", t.w_ssim},
        {"views_per_iter", t.views_per_iter},
        {"checkpoint_every", t.checkpoint_every},
        {"reg", {{"s_max", t.reg.s_max}, {"w_scale", t.reg.w_scale}, {"w_opacity", t.reg.w_opacity}}}}},
      {"noise", {{"position_sigma", c.noise.position_sigma}, {"opacity_jitter", c.noise.opacity_jitter}}},
      {"dye", box_json(c.dye)},
      {"dye_density", c.dye_density},
      {"files",
       {{"gaussians", c.files.gaussians},
        {"initial", c.files.initial},
        {"cameras", c.files.cameras},
        {"images", c.files.images},
        {"heldout_cameras", c.files.heldout_cameras},
        {"heldout_images", c.files.heldout_images}}},
  };
}

ScenarioConfig from_json(const json& j) {
  try {
    const std::string gen = j.value("generator", std::string("vessel"));
    check_keys(to_json(default_config(gen)), j, "");
    ScenarioConfig c = default_config(gen);
    json m = to_json(c);
    merge_into(m, j);
    c.name = m.at("name").get<std::string>();
    const json& g = m.at("grid");
    c.grid.dims = g.at("dims").get<std::array<int, 3>>();
    c.grid.h = g.at("h").get<double>();
    c.grid.origin = vec3(g.at("origin"), "grid.origin");
    const json& s = m.at("sim");
    c.sim.dt = s.at("dt").get<double>();
    c.sim.lambda = s.at("lambda").get<double>();
    c.sim.rho0 = s.at("rho0").get<double>();
    c.sim.gravity = vec3(s.at("gravity"), "sim.gravity");
    c.sim.dye_buoyancy = s.at("dye_buoyancy").get<bool>();
    c.sim.cg_tol = s.at("cg_tol").get<double>();
    c.sim.cg_max_iters = s.at("cg_max_iters").get<int>();
    c.mask.tile = m.at("mask").at("tile").get<int>();
    c.mask.kappa = m.at("mask").at("kappa").get<double>();
    c.objective.kind = parse_objective_kind(m.at("objective").at("kind").get<std::string>());
    c.objective.region = box_from(m.at("objective").at("region"), "objective.region");
    const json& b = m.at("body");
    c.body.mode = parse_body_mode(b.at("mode").get<std::string>());
    c.body.mass = b.at("mass").get<double>();
    if (b.at("inertia").is_null()) {
      c.body.inertia.reset();
    } else {
      const auto v = b.at("inertia").get<std::vector<double>>();
      if (v.size() != 9) throw UsageError("body.inertia: expected 9 numbers (row-major)");
      Mat3 I;
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) I(r, k) = v[static_cast<std::size_t>(3 * r + k)];
      c.body.inertia = I;
    }
    c.body.thrust = vec3(b.at("thrust"), "body.thrust");
    c.body.gravity = vec3(b.at("gravity"), "body.gravity");
    const json& cam = m.at("cameras");
    c.cameras.count = cam.at("count").get<int>();
    c.cameras.heldout = cam.at("heldout").get<int>();
    c.cameras.radius = cam.at("radius").get<double>();
    c.cameras.width = cam.at("width").get<int>();
    c.cameras.height = cam.at("height").get<int>();
    c.cameras.fov_deg = cam.at("fov_deg").get<double>();
    c.cameras.elevation_min = cam.at("elevation_min").get<double>();
    c.cameras.elevation_max = cam.at("elevation_max").get<double>();
    const json& t = m.at("train");
    c.train.iters_vis = t.at("iters_vis").get<int>();
    c.train.iters_joint = t.at("iters_joint").get<int>();
    c.train.lr.means = t.at("lr").at("means").get<double>();
    c.train.lr.rotations = t.at("lr").at("rotations").get<double>();
    c.train.lr.log_scales = t.at("lr").at("log_scales").get<double>();
    c.train.lr.opacity_logits = t.at("lr").at("opacity_logits").get<double>();
    c.train.lr.sh = t.at("lr").at("sh").get<double>();
    c.train.lambda_phys = t.at("lambda_phys").get<double>();
    c.train.lambda_ramp = t.at("lambda_ramp").get<bool>();
    c.train.phys_every = t.at("phys_every").get<int>();
    c.train.horizon = t.at("horizon").get<int>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    c.train.w_ssim = t.at("w_ssim").get<double>();
    c.train.views_per_iter = t.at("views_per_iter").get<int>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    c.train.reg.s_max = t.at("reg").at("s_max").get<double>();
    c.train.reg.w_scale = t.at("reg").at("w_scale").get<double>();
    c.train.reg.w_opacity = t.at("reg").at("w_opacity").get<double>();
    c.noise.position_sigma = m.at("noise").at("position_sigma").get<double>();
    c.noise.opacity_jitter = m.at("noise").at("opacity_jitter").get<double>();
    c.dye = box_from(m.at("dye"), "dye");
    c.dye_density = m.at("dye_density").get<double>();
    const json& f = m.at("files");
    c.files.gaussians = f.at("gaussians").get<std::string>();
    c.files.initial = f.at("initial").get<std::string>();
    c.files.cameras = f.at("cameras").get<std::string>();
    c.files.images = f.at("images").get<std::vector<std::string>>();
    c.files.heldout_cameras = f.at("heldout_cameras").get<std::string>();
    c.files.heldout_images = f.at("heldout_images").get<std::vector<std::string>>();
    c.objective.weight = c.train.lambda_phys;
    validate(c.grid);
    validate(c.sim);
    validate(c.train);
    if (c.cameras.count < 0 || c.cameras.heldout < 0 || c.cameras.width < 1 || c.cameras.height < 1)
      throw InvalidParameter("cameras: counts must be >= 0 and image size >= 1");
    return c;
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

std::vector<std::string> config_paths(const json& j) {
  std::vector<std::string> out;
  collect_paths(j, "", out);
  return out;
}

void apply_override(json& j, const std::string& path, const std::string& value) {
  json* node = &j;
  std::stringstream ss(path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    if (!node->is_object() || !node->contains(key)) {
      std::string msg = "unknown option --" + path + "; valid options:";
      for (const auto& p : config_paths(j)) msg += "\n  --" + p;
      throw UsageError(msg);
    }
    node = &(*node)[key];
  }
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;  // bare string
  }
  const bool ok = node->is_null() || (node->is_number() && v.is_number()) || (node->type() == v.type()) ||
                  (node->is_array() && v.is_array());
  if (!ok) throw UsageError("--" + path + ": expected " + std::string(node->type_name()) + ", got '" + value + "'");
  *node = v;
}

ScenarioConfig resolve_config(const json& user, const std::vector<std::pair<std::string, std::string>>& overrides) {
  const std::string gen = user.is_object() ? user.value("generator", std::string("vessel")) : std::string("vessel");
  json doc = to_json(default_config(gen));
  check_keys(doc, user, "");
  merge_into(doc, user);
  for (const auto& [k, v] : overrides) {
    if (k == "generator") throw UsageError("the generator cannot be overridden; set it in the config file");
    apply_override(doc, k, v);
  }
  return from_json(doc);
}

// -- generators ----------------------------------------------------------------

GaussianSet vessel_gaussians(const ScenarioConfig& c) {
  GaussianSet s;
  s.resize(0, 1);
  const GridSpec& g = c.grid;
  const double alpha = 0.95;
  const Vec3 scale = Vec3::Constant(0.5 * g.h);
  auto shell = [](int x, int y, int z) {
    const bool outer = x >= 6 && x <= 17 && y >= 6 && y <= 17 && z >= 9 && z <= 20;
    const bool cavity = x >= 8 && x <= 15 && y >= 8 && y <= 15 && z >= 11 && z <= 18;
    return outer && !cavity;
  };
  auto spout = [](int x, int y, int z) {
    const bool ring = x >= 10 && x <= 13 && y >= 10 && y <= 13;
    const bool hole = x >= 11 && x <= 12 && y >= 11 && y <= 12;
    return z >= 5 && z <= 8 && ring && !hole;
  };
  for (int z = 0; z < 24; ++z)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        if (!shell(x, y, z) && !spout(x, y, z)) continue;
        const bool check = ((x / 2 + y / 2 + z / 2) % 2) == 0;
        const Vec3 rgb = spout(x, y, z) ? Vec3(0.85, 0.55, 0.25)
                                        : (check ? Vec3(0.75, 0.78, 0.85) : Vec3(0.35, 0.45, 0.7));
        push_gaussian(s, g.center(x, y, z), scale, alpha, rgb);
      }
  return s;
}

GaussianSet wing_gaussians(const ScenarioConfig& c) {
  GaussianSet s;
  s.resize(0, 1);
  const GridSpec& g = c.grid;
  const Vec3 scale(0.6 * g.h, 0.6 * g.h, 0.35 * g.h);
  for (int y = 5; y <= 10; ++y)
    for (int x = 5; x <= 10; ++x) {
      const Vec3 mu(g.origin.x() + g.h * x, g.origin.y() + g.h * y, 0.0);
      const double t = (x - 5) / 5.0;
      const bool stripe = (y == 5 || y == 10);
      const Vec3 rgb = stripe ? Vec3(0.9, 0.3, 0.2) : Vec3(0.3 + 0.5 * t, 0.6, 0.8 - 0.5 * t);
      push_gaussian(s, mu, scale, 0.9, rgb);
    }
  return s;
}

GaussianSet toy_gaussians(const ScenarioConfig& c) {
  GaussianSet s;
  s.resize(0, 1);
  std::mt19937_64 rng(c.train.seed + 17);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const GridSpec& g = c.grid;
  const Vec3 center = g.center(0, 0, 0) + 0.5 * g.h * Vec3(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1);
  for (int i = 0; i < 8; ++i) {
    const Vec3 mu = center + g.h * Vec3(n01(rng), n01(rng), 0.6 * n01(rng));
    const Vec3 scale = g.h * Vec3(0.6 + 0.5 * u01(rng), 0.6 + 0.5 * u01(rng), 0.5 + 0.4 * u01(rng));
    Vec4 q(n01(rng), n01(rng), n01(rng), n01(rng));
    q.normalize();
    const std::size_t k = push_gaussian(s, mu, scale, 0.55 + 0.35 * u01(rng),
                                        Vec3(0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng)), q);
    for (int ch = 0; ch < 3; ++ch)
      for (int j = 1; j < s.coeffs(); ++j) s.sh_at(k, ch, j) = 0.2 * n01(rng);
  }
  return s;
}

std::vector<Camera> orbit_cameras(const CameraRig& rig, const Vec3& target, bool heldout) {
  const int n = heldout ? rig.heldout : rig.count;
  std::vector<Camera> cams;
  const double pi = std::numbers::pi;
  for (int k = 0; k < n; ++k) {
    const double az = 2 * pi * (k + (heldout ? 0.5 : 0.0)) / std::max(n, 1) + (heldout ? 0.3 : 0.0);
    const double frac = heldout ? 0.5 : (n > 1 ? static_cast<double>(k % 4) / 3.0 : 0.5);
    const double el = (rig.elevation_min + (rig.elevation_max - rig.elevation_min) * frac) * pi / 180.0;
    const Vec3 eye = target + rig.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(Camera::look_at(eye, target, Vec3(0, 0, 1), rig.fov_deg, rig.width, rig.height));
  }
  return cams;
}

SimSetup make_sim_setup(const ScenarioConfig& c, const GaussianSet& body) {
  SimSetup s;
  s.grid = c.grid;
  s.sim = c.sim;
  s.mask = c.mask;
  s.steps = c.train.horizon;
  s.body.mode = c.body.mode;
  s.body.x_ref = mean_of_means(body);
  s.body.thrust = c.body.thrust;
  s.body.gravity = c.body.gravity;
  s.rigid0.x = s.body.x_ref;
  s.rigid0.m = c.body.mass;
  if (c.body.inertia) {
    s.rigid0.I_body = *c.body.inertia;
  } else {
    double r = 0;
    for (std::size_t i = 0; i < body.size(); ++i) {
      const Vec3 ls = body.log_scale(i);
      r = std::max(r, (body.mean(i) - s.body.x_ref).norm() + ls.array().exp().maxCoeff());
    }
    r = std::max(r, c.grid.h);
    s.rigid0.I_body = 0.4 * c.body.mass * r * r * Mat3::Identity();
  }
  s.fluid0 = FluidState::zeros(c.grid);
  if (c.dye)
    for (std::size_t i = 0; i < c.grid.cell_count(); ++i)
      if (c.dye->contains(c.grid.center(i))) s.fluid0.rho[i] = c.dye_density;
  return s;
}

ScenarioBundle build_scenario(const ScenarioConfig& c) {
  ScenarioBundle b;
  b.config = c;
  TrainScenario& sc = b.scenario;
  sc.name = c.name;
  sc.objective = c.objective;
  sc.objective.weight = c.train.lambda_phys;
  if (c.generator == "from-files") {
    if (c.files.initial.empty() || c.files.cameras.empty())
      throw UsageError("from-files needs files.initial and files.cameras");
    sc.initial = load_gaussians(c.files.initial);
    b.ground_truth = c.files.gaussians.empty() ? sc.initial : load_gaussians(c.files.gaussians);
    sc.cameras = load_cameras(c.files.cameras);
    if (c.files.images.size() != sc.cameras.size())
      throw UsageError("from-files: files.images must list one PNG per camera");
    for (const auto& p : c.files.images) sc.targets.push_back(read_png(p));
    if (!c.files.heldout_cameras.empty()) {
      sc.heldout_cameras = load_cameras(c.files.heldout_cameras);
      if (c.files.heldout_images.size() != sc.heldout_cameras.size())
        throw UsageError("from-files: files.heldout_images must list one PNG per held-out camera");
      for (const auto& p : c.files.heldout_images) sc.heldout_targets.push_back(read_png(p));
    }
    sc.sim = make_sim_setup(c, sc.initial);
    return b;
  }
  if (c.generator == "vessel")
    b.ground_truth = vessel_gaussians(c);
  else if (c.generator == "wing")
    b.ground_truth = wing_gaussians(c);
  else if (c.generator == "toy")
    b.ground_truth = toy_gaussians(c);
  else
    throw UsageError("unknown generator '" + c.generator + "'");

  const Vec3 target = mean_of_means(b.ground_truth);
  sc.cameras = orbit_cameras(c.cameras, target, false);
  sc.heldout_cameras = orbit_cameras(c.cameras, target, true);
  for (const auto& cam : sc.cameras) sc.targets.push_back(render(b.ground_truth, cam).image);
  for (const auto& cam : sc.heldout_cameras) sc.heldout_targets.push_back(render(b.ground_truth, cam).image);

  sc.initial = b.ground_truth;
  std::mt19937_64 rng(c.train.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double& v : sc.initial.means) v += c.noise.position_sigma * c.grid.h * n01(rng);
  for (double& v : sc.initial.opacity_logits) v += c.noise.opacity_jitter * n01(rng);
  sc.sim = make_sim_setup(c, sc.initial);
  return b;
}

std::vector<std::filesystem::path> write_bundle(const ScenarioBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  auto add = [&](const std::filesystem::path& p) {
    files.push_back(p);
    return p;
  };
  save_gaussians(b.ground_truth, add(dir / "ground_truth.ply"));
  save_gaussians(b.scenario.initial, add(dir / "initial.ply"));
  save_cameras(b.scenario.cameras, add(dir / "cameras.json"));
  save_cameras(b.scenario.heldout_cameras, add(dir / "heldout_cameras.json"));
  char name[64];
  for (std::size_t v = 0; v < b.scenario.targets.size(); ++v) {
    std::snprintf(name, sizeof name, "view_%03zu.png", v);
    write_png(b.scenario.targets[v], add(dir / name));
  }
  for (std::size_t v = 0; v < b.scenario.heldout_targets.size(); ++v) {
    std::snprintf(name, sizeof name, "heldout_%03zu.png", v);
    write_png(b.scenario.heldout_targets[v], add(dir / name));
  }
  return files;
}

}  // namespace pgs
