#pragma once

#include "pgs/grid.hpp"

#include <span>

namespace pgs {

struct SimParams {
  double dt = 0.1;
  double lambda = 1e3;  // Brinkman strength
  double rho0 = 1.0;    // fluid density
  /// Body-force acceleration. With dye_buoyancy the force on a cell is
  /// gravity * rho (dye is the heavy phase); otherwise it is uniform.
  Vec3 gravity{0.0, 0.0, -9.8};
  bool dye_buoyancy = true;
  double cg_tol = 1e-6;
  int cg_max_iters = 0;  // 0: 10 * longest grid axis
};

void validate(const SimParams& p);

struct FluidState {
  VectorField u;
  ScalarField p;
  ScalarField rho;
  int t = 0;

  static FluidState zeros(const GridSpec& spec);
  bool operator==(const FluidState&) const = default;
};

// -- elementary operators ----------------------------------------------------

/// u + dt * f.
VectorField apply_forces(const VectorField& u, const VectorField& f, double dt);
VectorField apply_forces(const VectorField& u, const Vec3& f, double dt);

/// Force field the step applies: gravity*rho with buoyancy, else uniform gravity.
VectorField body_force(const FluidState& s, const SimParams& params);

/// (u~ + dt*lambda*chi*u_s) / (1 + dt*lambda*chi), per cell and component.
VectorField brinkman_step(const VectorField& u_tilde, std::span<const double> chi,
                          const VectorField& u_solid, double dt, double lambda);

struct BrinkmanGrads {
  VectorField d_u_tilde;
  ScalarField d_chi;
  VectorField d_u_solid;
};
BrinkmanGrads brinkman_backward(const VectorField& d_u_b, const VectorField& u_tilde,
                                std::span<const double> chi, const VectorField& u_solid,
                                double dt, double lambda);

/// Semi-Lagrangian transport: sample `field` at x - dt*u(x) (trilinear,
/// backtrace clamped to the box spanned by the cell centers).
ScalarField advect(const ScalarField& field, const VectorField& u, double dt, const GridSpec& spec);
VectorField advect(const VectorField& field, const VectorField& u, double dt, const GridSpec& spec);

/// Adds the pullback of d_out to d_field and d_u.
void advect_backward(const ScalarField& d_out, const ScalarField& field, const VectorField& u,
                     double dt, const GridSpec& spec, ScalarField& d_field, VectorField& d_u);
void advect_backward(const VectorField& d_out, const VectorField& field, const VectorField& u,
                     double dt, const GridSpec& spec, VectorField& d_field, VectorField& d_u);

/// Central-difference gradient; Neumann walls (ghost = boundary value).
VectorField gradient(const ScalarField& p, const GridSpec& spec);
/// Central-difference divergence, the negative adjoint of `gradient`. Ghost
/// normal velocity mirrors with opposite sign, so the wall-face velocity is zero.
ScalarField divergence(const VectorField& u, const GridSpec& spec);

struct ProjectResult {
  VectorField u;
  ScalarField p;
  int iterations = 0;
  double residual = 0.0;  // final ||r||_inf / ||b||_inf
};

/// Solves div grad p = div u_hat by matrix-free CG (zero-mean p), returns
/// u_hat - grad p. Throws SolverFailure past cg_max_iters.
ProjectResult project(const VectorField& u_hat, const GridSpec& spec, const SimParams& params);

/// The projection is an orthogonal projector, so its adjoint is itself.
VectorField project_backward(const VectorField& d_u_next, const GridSpec& spec, const SimParams& params);

// -- full step ---------------------------------------------------------------

/// Intermediates of one step, kept for the reverse sweep.
struct StepRecord {
  VectorField u_tilde;
  VectorField u_b;
  ScalarField rho_pre_clamp;
  int cg_iterations = 0;
};

/// forces -> Brinkman -> advect u by u_B -> project -> advect rho by u_B.
FluidState step(const FluidState& s, std::span<const double> chi, const VectorField& u_solid,
                const SimParams& params, const GridSpec& spec, StepRecord* record = nullptr);

struct StepGrads {
  VectorField d_u;
  ScalarField d_rho;
  ScalarField d_chi;
  VectorField d_u_solid;
  /// Cotangents on the Brinkman inputs/outputs, needed by the rigid coupling.
  VectorField d_u_tilde;
};

/// Pulls (d_u_next, d_rho_next) back through one step. `extra_d_u_b` and
/// `extra_d_u_tilde` carry cotangents from consumers of the intermediates
/// (the reaction wrench) and may be empty.
StepGrads step_backward(const FluidState& s, std::span<const double> chi, const VectorField& u_solid,
                        const StepRecord& rec, const VectorField& d_u_next,
                        const ScalarField& d_rho_next, const VectorField* extra_d_u_b,
                        const VectorField* extra_d_u_tilde, const SimParams& params,
                        const GridSpec& spec);

struct FluidDiagnostics {
  double max_divergence = 0.0;
  double dye_mass = 0.0;
  double kinetic_energy = 0.0;
};
FluidDiagnostics diagnostics(const FluidState& s, const SimParams& params, const GridSpec& spec);

double max_abs(std::span<const double> v);

}  // namespace pgs
