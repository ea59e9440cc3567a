#pragma once

#include "pgs/adjoint.hpp"
#include "pgs/objectives.hpp"
#include "pgs/splat.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgs {

struct LearningRates {
  double means = 1.6e-3;
  double rotations = 1e-3;
  double log_scales = 5e-3;
  double opacity_logits = 5e-2;
  double sh = 2.5e-3;
  double of(ParamGroup g) const;
};

struct TrainConfig {
  int iters_vis = 500;
  int iters_joint = 300;
  LearningRates lr;
  double lambda_phys = 0.0;
  bool lambda_ramp = false;  // ramp lambda linearly from 0 over the joint phase
  int phys_every = 1;
  int horizon = 40;          // simulation steps T
  std::uint64_t seed = 0;
  double w_ssim = 0.2;
  int views_per_iter = 0;    // 0: every training view each iteration
  int checkpoint_every = 100;
  RegParams reg;
};

void validate(const TrainConfig& c);

/// Everything train() needs besides the config.
struct TrainScenario {
  std::string name = "scenario";
  GaussianSet initial;
  std::vector<Camera> cameras;
  std::vector<Image> targets;
  std::vector<Camera> heldout_cameras;
  std::vector<Image> heldout_targets;
  SimSetup sim;
  ObjectiveSpec objective;
};

/// Adam with per-group learning rates; rotations are renormalized after each step.
class Adam {
 public:
  Adam(const GaussianSet& shape, const LearningRates& lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-15);
  void step(GaussianSet& theta, const GradBuffer& g);
  int iterations() const { return t_; }

 private:
  LearningRates lr_;
  double b1_, b2_, eps_;
  int t_ = 0;
  GradBuffer m_, v_;
};

struct LossTerms {
  double vis = 0.0;
  double ssim = 0.0;
  double phys = 0.0;
  double reg = 0.0;
  bool has_phys = false;
  GradBuffer g_vis, g_phys, g_reg;
  Trajectory trajectory;  // physics runs only (rigid path + per-step data)
  FluidState final_fluid;
};

struct EvalRequest {
  std::vector<int> views;    // training views for L_vis; empty skips the visual term
  bool physics = false;
  bool gradients = true;
  bool keep_fluid = false;
};

/// Evaluates the loss terms at theta. L_vis is the mean over the requested views.
LossTerms evaluate(const TrainScenario& sc, const TrainConfig& cfg, const GaussianSet& theta, const EvalRequest& req);

/// J = L_vis + lambda * L_phys + L_reg and its gradient.
double joint_value(const LossTerms& t, double lambda);
GradBuffer joint_gradient(const LossTerms& t, double lambda);

struct TrainRow {
  int iter = 0;
  int phase = 1;
  double l_vis = 0, l_phys = 0, l_reg = 0, j = 0, ssim = 0;
  std::array<double, 5> grad_norm{};
  double wall = 0;
};

struct TrainLog {
  std::vector<TrainRow> rows;
  void write_csv(const std::filesystem::path& path) const;
  /// Rows equal in every column except wall time.
  bool same_values(const TrainLog& o) const;
};

struct TrainResult {
  GaussianSet final;
  TrainLog log;
};

/// Raised when the simulator fails mid-training; a checkpoint was written first.
struct TrainingFailure : std::runtime_error {
  TrainingFailure(const std::string& what, int iteration) : std::runtime_error(what), iteration(iteration) {}
  int iteration;
};

struct TrainOutput {
  std::optional<std::filesystem::path> dir;  // checkpoints and logs go here when set
  std::function<void(const TrainRow&)> progress;
};

TrainResult train(const TrainScenario& sc, const TrainConfig& cfg, const TrainOutput& out = {});

/// Mean SSIM of theta over the held-out views (training views when none are held out).
double heldout_ssim(const TrainScenario& sc, const GaussianSet& theta);

struct SweepRow {
  double lambda = 0;
  double ssim = 0;      // held-out
  double neg_phys = 0;  // -L_phys of the final set
  double mean_z = 0;
  double z_first = 0, z_last = 0;
  double outside_fraction = 0;
  std::string status = "ok";
};

std::vector<SweepRow> sweep(const TrainScenario& sc, const TrainConfig& cfg, const std::vector<double>& lambdas,
                            const std::optional<std::filesystem::path>& dir = std::nullopt);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

/// Final-state metrics of a set under the scenario's physics.
SweepRow physics_metrics(const TrainScenario& sc, const TrainConfig& cfg, const GaussianSet& theta);

}  // namespace pgs
