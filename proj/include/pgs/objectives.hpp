#pragma once

#include "pgs/adjoint.hpp"

#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace pgs {

enum class ObjectiveKind { PourOut, PourHold, Lift };
ObjectiveKind parse_objective_kind(std::string_view s);
std::string_view to_string(ObjectiveKind k);

/// Axis-aligned box in world coordinates (inclusive).
struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  bool contains(const Vec3& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
};

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::Lift;
  double weight = 0.0;        // lambda_phys
  std::optional<Box> region;  // vessel region of pour metrics
};

inline constexpr double kMassFloor = 1e-12;

/// Dye center-of-mass height, each frame normalized by its own mass (floored at
/// kMassFloor), averaged over t = 0..T; negated for pour-hold. Throws
/// DegenerateScenario when the initial frame holds no dye.
double pour_loss(const Trajectory& traj, const ObjectiveSpec& obj);
/// -(1/(T+1)) sum_t z_t.
double lift_loss(const Trajectory& traj);
double physics_loss(const Trajectory& traj, const ObjectiveSpec& obj);

struct RegParams {
  double s_max = 3.0;
  double w_scale = 0.0;
  double w_opacity = 0.0;
};

/// w_scale * sum max(0, s - s_max)^2 + w_opacity * sum alpha; adds its gradient when given.
double reg_loss(const GaussianSet& set, const RegParams& p, GradBuffer* grads = nullptr);

double dye_mass(const FluidState& s, const GridSpec& spec);
/// (mean dye height, floored mass) of one frame.
std::pair<double, double> frame_height(const FluidState& s, const GridSpec& spec);
/// Fraction of the dye mass whose cell centers lie outside `region`.
double mass_fraction_outside(const FluidState& s, const GridSpec& spec, const Box& region);

/// Streaming form of the physics objective for use with a Tape: observes
/// states during record() and supplies the per-state cotangents to backward().
class PhysicsObjective {
 public:
  PhysicsObjective(const ObjectiveSpec& obj, const SimSetup& setup);
  StateObserver observer();
  double value() const { return value_; }
  CotangentFn seeds() const;

 private:
  ObjectiveSpec obj_;
  GridSpec spec_;
  int steps_;
  double value_ = 0.0;
  std::vector<std::pair<double, double>> frames_;
};

}  // namespace pgs
