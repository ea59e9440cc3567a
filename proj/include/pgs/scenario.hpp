#pragma once

#include "pgs/optimize.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pgs {

/// Orbit of pinhole cameras around the scene center.
struct CameraRig {
  int count = 20;
  int heldout = 4;
  double radius = 36.0;
  int width = 64;
  int height = 64;
  double fov_deg = 40.0;
  double elevation_min = 10.0;
  double elevation_max = 40.0;
};

struct NoiseParams {
  double position_sigma = 0.5;
  double opacity_jitter = 0.5;
};

struct BodyParams {
  BodyMode mode = BodyMode::Static;
  double mass = 1.0;
  std::optional<Mat3> inertia;  // default: solid sphere of the body's bounding radius
  Vec3 thrust = Vec3::Zero();
  Vec3 gravity = Vec3::Zero();
};

/// Inputs of the from-files generator.
struct FileInputs {
  std::string gaussians;  // ground truth or reference set (optional)
  std::string initial;    // starting point of training
  std::string cameras;
  std::vector<std::string> images;
  std::string heldout_cameras;
  std::vector<std::string> heldout_images;
};

struct ScenarioConfig {
  std::string name = "vessel";
  std::string generator = "vessel";  // vessel | wing | toy | from-files
  GridSpec grid;
  SimParams sim;
  MaskParams mask;
  ObjectiveSpec objective;
  BodyParams body;
  CameraRig cameras;
  TrainConfig train;
  NoiseParams noise;
  std::optional<Box> dye;
  double dye_density = 1.0;
  FileInputs files;
};

/// Built-in defaults per generator.
ScenarioConfig default_config(const std::string& generator);

nlohmann::json to_json(const ScenarioConfig& c);
/// Strict: every key must exist in the generator's defaults.
ScenarioConfig from_json(const nlohmann::json& j);

/// Valid dot-paths of a config document (leaves only).
std::vector<std::string> config_paths(const nlohmann::json& j);
/// Sets the leaf at `path` (e.g. "train.lambda_phys") from its text form.
/// Throws UsageError for unknown paths or mistyped values.
void apply_override(nlohmann::json& j, const std::string& path, const std::string& value);

/// Defaults of the document's generator, merged with the document, then overrides.
ScenarioConfig resolve_config(const nlohmann::json& user, const std::vector<std::pair<std::string, std::string>>& overrides = {});

struct ScenarioBundle {
  ScenarioConfig config;
  GaussianSet ground_truth;
  TrainScenario scenario;  // initial set, views, targets, simulation setup
};

/// Ground truth, cameras, rendered targets and the noised initial set.
ScenarioBundle build_scenario(const ScenarioConfig& c);

/// Writes ground_truth.ply, initial.ply, cameras.json, heldout_cameras.json and view PNGs.
std::vector<std::filesystem::path> write_bundle(const ScenarioBundle& b, const std::filesystem::path& dir);

/// Simulation setup of a config with `body` posed at its reference point.
SimSetup make_sim_setup(const ScenarioConfig& c, const GaussianSet& body);

std::vector<Camera> orbit_cameras(const CameraRig& rig, const Vec3& target, bool heldout);

GaussianSet vessel_gaussians(const ScenarioConfig& c);
GaussianSet wing_gaussians(const ScenarioConfig& c);
GaussianSet toy_gaussians(const ScenarioConfig& c);

}  // namespace pgs
