#pragma once

#include "pgs/fluid.hpp"
#include "pgs/occupancy.hpp"
#include "pgs/scene.hpp"

#include <string_view>
#include <utility>

namespace pgs {

enum class BodyMode { Static, Translating, Full };
BodyMode parse_body_mode(std::string_view s);
std::string_view to_string(BodyMode m);

struct RigidState {
  Vec3 x = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec4 q{1.0, 0.0, 0.0, 0.0};
  Vec3 L = Vec3::Zero();
  double m = 1.0;
  Mat3 I_body = Mat3::Identity();
  bool operator==(const RigidState&) const = default;
};

void validate(const RigidState& s);

/// Hydrodynamic force and torque split tau(w) = tau0 + K w, plus the known
/// external force.
struct BodyForces {
  Vec3 f = Vec3::Zero();
  Vec3 tau = Vec3::Zero();  // reaction torque about x at the current w (diagnostic)
  Vec3 tau0 = Vec3::Zero();
  Mat3 K = Mat3::Zero();
  Vec3 f_ext = Vec3::Zero();
};

/// Scenario constants of the moving body.
struct BodyConfig {
  BodyMode mode = BodyMode::Static;
  Vec3 x_ref = Vec3::Zero();     // body-frame reference point (mean of initial means)
  Vec3 thrust = Vec3::Zero();    // constant world-frame force
  Vec3 gravity = Vec3::Zero();   // body gravity acceleration; f_ext = thrust + m*gravity
};

Mat3 world_inertia(const RigidState& s);
/// w = (I_w)^-1 L.
Vec3 angular_velocity(const RigidState& s);

/// v + w x (x - x_t) at every cell center.
VectorField solid_velocity_field(const RigidState& s, const GridSpec& spec);
VectorField solid_velocity_field(const Vec3& v, const Vec3& omega, const Vec3& x, const GridSpec& spec);

/// Body Gaussians moved into world space: mu' = R(mu - x_ref) + x, q' = q (x) q_i.
GaussianSet posed_gaussians(const GaussianSet& body, const RigidState& s, const Vec3& x_ref);

/// chi_world(x) = chi_body(R^T (x - x_t) + x_ref), re-evaluated per cell (no
/// resampling). The identity pose returns tiled_mask(body) bit for bit.
OccupancyGrid posed_mask(const GaussianSet& body, const RigidState& s, const Vec3& x_ref,
                         const GridSpec& spec, const MaskParams& mp);

/// Pulls dL/dchi of a posed mask back to the body parameters and the pose.
void posed_mask_backward(const OccupancyGrid& grid, std::span<const double> dchi,
                         const GaussianSet& body, const RigidState& s, const Vec3& x_ref,
                         GradBuffer& grads, Vec3& dx, Vec4& dq);

/// f = -sum rho0 (u_B - u~)/dt h^3 and the matching torque about x_t.
BodyForces reaction_wrench(const VectorField& u_tilde, const VectorField& u_b, const RigidState& s,
                           const GridSpec& spec, const SimParams& params);

/// tau0 and K of the implicit angular update.
void angular_coefficients(const VectorField& u_tilde, std::span<const double> chi, const RigidState& s,
                          const GridSpec& spec, const SimParams& params, Vec3& tau0, Mat3& K);

struct IntegrateInfo {
  bool cholesky_ok = true;
  double min_eigenvalue = 0.0;  // of I_w - dt K (full mode)
  Vec3 omega_next = Vec3::Zero();
  Vec4 dq{1.0, 0.0, 0.0, 0.0};
  Vec4 q_unnormalized{1.0, 0.0, 0.0, 0.0};
};

/// Symplectic Euler for (x, v); implicit angular solve (I_w - dt K) w' = L + dt tau0
/// and exponential-map orientation update in Full mode.
RigidState integrate(const RigidState& s, const BodyForces& w, double dt, BodyMode mode,
                     IntegrateInfo* info = nullptr);

struct RigidCotangent {
  Vec3 x = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec4 q = Vec4::Zero();
  Vec3 L = Vec3::Zero();
};

/// Everything the reverse sweep needs from one coupled step.
struct CoupledRecord {
  OccupancyGrid mask;      // empty when a fixed mask was supplied
  VectorField u_solid;
  StepRecord fluid;
  BodyForces forces;
  IntegrateInfo integrate;
  Vec3 omega = Vec3::Zero();
};

/// posed_mask -> fluid step (u_solid from the rigid state) -> reaction wrench
/// and angular coefficients -> integrate. `fixed_mask` skips mask evaluation
/// (static bodies evaluate it once per trajectory).
std::pair<FluidState, RigidState> coupled_step(const FluidState& fluid, const RigidState& rigid,
                                               const GaussianSet& body, const SimParams& params,
                                               const BodyConfig& cfg, const GridSpec& spec,
                                               const MaskParams& mp, CoupledRecord* rec = nullptr,
                                               const OccupancyGrid* fixed_mask = nullptr);

struct CoupledGrads {
  VectorField d_u;
  ScalarField d_rho;
  RigidCotangent d_rigid;
  ScalarField d_chi;  // not yet pulled back through the mask
};

CoupledGrads coupled_step_backward(const FluidState& fluid, const RigidState& rigid,
                                   const CoupledRecord& rec, const OccupancyGrid& mask,
                                   const VectorField& d_u_next, const ScalarField& d_rho_next,
                                   const RigidCotangent& d_rigid_next, const SimParams& params,
                                   const BodyConfig& cfg, const GridSpec& spec);

}  // namespace pgs
