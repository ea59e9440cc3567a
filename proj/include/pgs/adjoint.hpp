#pragma once

#include "pgs/fluid.hpp"
#include "pgs/occupancy.hpp"
#include "pgs/rigid.hpp"
#include "pgs/scene.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

namespace pgs {

/// Everything except theta that determines a simulated trajectory.
struct SimSetup {
  GridSpec grid;
  SimParams sim;
  MaskParams mask;
  BodyConfig body;
  RigidState rigid0;
  FluidState fluid0;
  int steps = 40;
  int stride = 4;  // checkpoint stride of the tape
};

void validate(const SimSetup& s);

/// Sequence of simulated states t = 0..T. Fluid states are optional since
/// most consumers only need the rigid path and streamed fluid statistics.
struct Trajectory {
  GridSpec spec;
  std::vector<FluidState> fluid_states;
  std::vector<RigidState> rigid_states;
  std::vector<BodyForces> forces;         // per step, size T
  std::vector<IntegrateInfo> integrate;   // per step, size T
  int steps() const { return static_cast<int>(rigid_states.size()) - 1; }
};

/// dLoss/d(state_t), accumulated by objectives.
struct StateCotangent {
  VectorField d_u;
  ScalarField d_rho;
  RigidCotangent d_rigid;

  static StateCotangent zeros(const GridSpec& spec);
};

/// Adds dLoss/d(state_t) into ct. Objectives here are linear in the state so
/// the state itself is not passed.
using CotangentFn = std::function<void(int t, StateCotangent& ct)>;

/// Called once per state in forward order.
using StateObserver = std::function<void(int t, const FluidState&, const RigidState&)>;

/// Forward record of one simulation: checkpoints every `stride` steps plus the
/// small per-step rigid data. Segments are recomputed during the reverse sweep.
class Tape {
 public:
  const SimSetup& setup() const { return setup_; }
  const GaussianSet& body() const { return body_; }
  bool complete() const { return complete_; }
  const Trajectory& trajectory() const { return traj_; }
  const OccupancyGrid& static_mask() const { return static_mask_; }
  /// Largest number of full fluid states held at once (checkpoints + segment buffer).
  int peak_stored_states() const { return peak_; }
  int stored_states() const { return stored_; }
  int total_cg_iterations() const { return cg_iters_; }

 private:
  friend Tape record(const GaussianSet&, const SimSetup&, const StateObserver&, bool);
  friend GradBuffer backward(Tape&, const CotangentFn&, StateCotangent*);
  void hold(int n);

  SimSetup setup_;
  GaussianSet body_;
  std::map<int, std::pair<FluidState, RigidState>> checkpoints_;
  OccupancyGrid static_mask_;
  Trajectory traj_;
  bool complete_ = false;
  int stored_ = 0;
  int peak_ = 0;
  int cg_iters_ = 0;
};

/// Runs the coupled simulation and records a tape. With keep_fluid the full
/// fluid trajectory is also kept (not counted against the tape budget).
Tape record(const GaussianSet& body, const SimSetup& setup, const StateObserver& observe = {},
            bool keep_fluid = false);

/// Reverse sweep. Returns dLoss/dtheta; optionally the cotangent of the initial state.
GradBuffer backward(Tape& tape, const CotangentFn& seeds, StateCotangent* initial = nullptr);

/// ceil(T/stride) + stride.
int stored_state_bound(int steps, int stride);

// -- finite-difference verification ------------------------------------------

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t per_group = 0;   // coordinates sampled per group; 0 checks all
  std::uint64_t seed = 0;
  /// Relative error denominator floor, as a fraction of the largest |analytic|.
  double floor = 1e-6;
};

struct GradCheckRow {
  ParamGroup group;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
  bool flagged;  // non-finite loss under perturbation
};

struct GradReport {
  std::array<double, 5> group_norm{};
  std::vector<GradCheckRow> rows;
  double max_rel = 0.0;
  double median_rel = 0.0;
  std::size_t flagged = 0;

  std::array<double, 5> group_max_rel() const;
  void write_csv(const std::filesystem::path& path) const;
};

using LossFn = std::function<double(const GaussianSet&)>;

/// Central differences (f(theta + eps e) - f(theta - eps e)) / 2 eps on sampled
/// coordinates, compared to `analytic`.
GradReport gradcheck(const LossFn& loss, const GaussianSet& theta, const GradBuffer& analytic,
                     const GradCheckOptions& opt = {});

}  // namespace pgs
