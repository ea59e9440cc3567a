#include "pgs/objectives.hpp"

#include "pgs/common.hpp"

#include <cmath>
#include <string>

namespace pgs {

ObjectiveKind parse_objective_kind(std::string_view s) {
  if (s == "pour-out") return ObjectiveKind::PourOut;
  if (s == "pour-hold") return ObjectiveKind::PourHold;
  if (s == "lift") return ObjectiveKind::Lift;
  throw InvalidParameter("unknown objective kind '" + std::string(s) + "' (pour-out|pour-hold|lift)");
}

std::string_view to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::PourOut: return "pour-out";
    case ObjectiveKind::PourHold: return "pour-hold";
    case ObjectiveKind::Lift: return "lift";
  }
  return "?";
}

namespace {

double cell_volume(const GridSpec& spec) { return spec.h * spec.h * spec.h; }

double dye_height_sum(const FluidState& s, const GridSpec& spec) {
  const double v = cell_volume(spec);
  return deterministic_sum(static_cast<std::ptrdiff_t>(s.rho.size()), 0.0, [&](std::ptrdiff_t c) {
    const auto i = static_cast<std::size_t>(c);
    return s.rho[i] * spec.center(i).z() * v;
  });
}

double pour_sign(ObjectiveKind k) { return k == ObjectiveKind::PourHold ? -1.0 : 1.0; }

double initial_mass(const FluidState& s, const GridSpec& spec) {
  const double m = dye_mass(s, spec);
  if (!(m > 0)) throw DegenerateScenario("pour objective needs dye in the initial state");
  return std::max(m, kMassFloor);
}

}  // namespace

std::pair<double, double> frame_height(const FluidState& s, const GridSpec& spec) {
  const double m = std::max(dye_mass(s, spec), kMassFloor);
  return {dye_height_sum(s, spec) / m, m};
}

double dye_mass(const FluidState& s, const GridSpec& spec) {
  const double v = cell_volume(spec);
  return deterministic_sum(static_cast<std::ptrdiff_t>(s.rho.size()), 0.0,
                           [&](std::ptrdiff_t c) { return s.rho[static_cast<std::size_t>(c)] * v; });
}

double mass_fraction_outside(const FluidState& s, const GridSpec& spec, const Box& region) {
  const double total = dye_mass(s, spec);
  if (!(total > 0)) return 0.0;
  const double v = cell_volume(spec);
  const double out = deterministic_sum(static_cast<std::ptrdiff_t>(s.rho.size()), 0.0, [&](std::ptrdiff_t c) {
    const auto i = static_cast<std::size_t>(c);
    return region.contains(spec.center(i)) ? 0.0 : s.rho[i] * v;
  });
  return out / total;
}

double pour_loss(const Trajectory& traj, const ObjectiveSpec& obj) {
  require(!traj.fluid_states.empty(), "pour_loss: trajectory has no fluid states");
  initial_mass(traj.fluid_states.front(), traj.spec);
  double acc = 0;
  for (const auto& s : traj.fluid_states) acc += frame_height(s, traj.spec).first;
  return pour_sign(obj.kind) * acc / static_cast<double>(traj.fluid_states.size());
}

double lift_loss(const Trajectory& traj) {
  require(!traj.rigid_states.empty(), "lift_loss: trajectory has no rigid states");
  double acc = 0;
  for (const auto& r : traj.rigid_states) acc += r.x.z();
  return -acc / static_cast<double>(traj.rigid_states.size());
}

double physics_loss(const Trajectory& traj, const ObjectiveSpec& obj) {
  return obj.kind == ObjectiveKind::Lift ? lift_loss(traj) : pour_loss(traj, obj);
}

double reg_loss(const GaussianSet& set, const RegParams& p, GradBuffer* grads) {
  double scale_term = 0, opacity_term = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      const double s = std::exp(set.log_scale(i)[d]);
      const double excess = std::max(0.0, s - p.s_max);
      scale_term += excess * excess;
      if (grads && excess > 0) grads->log_scale(i)[d] += p.w_scale * 2.0 * excess * s;
    }
    const double a = sigmoid(set.opacity_logits[i]);
    opacity_term += a;
    if (grads) grads->opacity_logits[i] += p.w_opacity * a * (1.0 - a);
  }
  return p.w_scale * scale_term + p.w_opacity * opacity_term;
}

PhysicsObjective::PhysicsObjective(const ObjectiveSpec& obj, const SimSetup& setup)
    : obj_(obj), spec_(setup.grid), steps_(setup.steps) {
  if (obj.weight < 0) throw InvalidParameter("objective weight must be >= 0");
  if (obj.kind != ObjectiveKind::Lift) initial_mass(setup.fluid0, setup.grid);
}

StateObserver PhysicsObjective::observer() {
  value_ = 0.0;
  frames_.assign(static_cast<std::size_t>(steps_) + 1, {0.0, kMassFloor});
  const double n = steps_ + 1;
  return [this, n](int t, const FluidState& f, const RigidState& r) {
    if (obj_.kind == ObjectiveKind::Lift) {
      value_ -= r.x.z() / n;
      return;
    }
    const auto fh = frame_height(f, spec_);
    frames_.at(static_cast<std::size_t>(t)) = fh;
    value_ += pour_sign(obj_.kind) * fh.first / n;
  };
}

CotangentFn PhysicsObjective::seeds() const {
  const double n = steps_ + 1;
  if (obj_.kind == ObjectiveKind::Lift)
    return [n](int, StateCotangent& ct) { ct.d_rigid.x.z() -= 1.0 / n; };
  // d/drho of sum(rho z v) / sum(rho v) is v (z - zbar) / M.
  const double k = pour_sign(obj_.kind) * cell_volume(spec_) / n;
  return [this, k](int t, StateCotangent& ct) {
    const auto [zbar, m] = frames_.at(static_cast<std::size_t>(t));
    const double c = k / m;
    for (std::size_t i = 0; i < ct.d_rho.size(); ++i) ct.d_rho[i] += c * (spec_.center(i).z() - zbar);
  };
}

}  // namespace pgs
