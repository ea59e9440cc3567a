#include "pgs/fluid.hpp"

#include "pgs/common.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pgs {

void validate(const SimParams& p) {
  if (!(p.dt > 0)) throw InvalidParameter("dt must be positive");
  if (!(p.lambda >= 0)) throw InvalidParameter("lambda must be >= 0");
  if (!(p.cg_tol > 0 && p.cg_tol < 1)) throw InvalidParameter("cg_tol must lie in (0,1)");
  if (!(p.rho0 > 0)) throw InvalidParameter("rho0 must be positive");
}

FluidState FluidState::zeros(const GridSpec& spec) {
  FluidState s;
  s.u.resize(spec.cell_count());
  s.p.assign(spec.cell_count(), 0.0);
  s.rho.assign(spec.cell_count(), 0.0);
  return s;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

namespace {

std::ptrdiff_t ssize(std::size_t n) { return static_cast<std::ptrdiff_t>(n); }

double dot(const ScalarField& a, const ScalarField& b) {
  return deterministic_sum(ssize(a.size()), 0.0, [&](std::ptrdiff_t i) {
    return a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
  });
}

}  // namespace

VectorField apply_forces(const VectorField& u, const VectorField& f, double dt) {
  require(u.size() == f.size(), "apply_forces: shape mismatch");
  VectorField out(u.size());
  for (int d = 0; d < 3; ++d)
    for (std::size_t i = 0; i < u.size(); ++i) out.c[d][i] = u.c[d][i] + dt * f.c[d][i];
  return out;
}

VectorField apply_forces(const VectorField& u, const Vec3& f, double dt) {
  VectorField out(u.size());
  for (int d = 0; d < 3; ++d)
    for (std::size_t i = 0; i < u.size(); ++i) out.c[d][i] = u.c[d][i] + dt * f[d];
  return out;
}

VectorField body_force(const FluidState& s, const SimParams& params) {
  const std::size_t n = s.u.size();
  if (!params.dye_buoyancy) return VectorField::constant(n, params.gravity);
  VectorField f(n);
  for (int d = 0; d < 3; ++d)
    for (std::size_t i = 0; i < n; ++i) f.c[d][i] = params.gravity[d] * s.rho[i];
  return f;
}

VectorField brinkman_step(const VectorField& u_tilde, std::span<const double> chi,
                          const VectorField& u_solid, double dt, double lambda) {
  const std::size_t n = u_tilde.size();
  require(chi.size() == n && u_solid.size() == n, "brinkman_step: shape mismatch");
  VectorField out(n);
  parallel_for(ssize(n), [&](std::ptrdiff_t ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double c = dt * lambda * chi[i];
    for (int d = 0; d < 3; ++d) out.c[d][i] = (u_tilde.c[d][i] + c * u_solid.c[d][i]) / (1.0 + c);
  });
  return out;
}

BrinkmanGrads brinkman_backward(const VectorField& d_u_b, const VectorField& u_tilde,
                                std::span<const double> chi, const VectorField& u_solid,
                                double dt, double lambda) {
  const std::size_t n = u_tilde.size();
  require(chi.size() == n && u_solid.size() == n && d_u_b.size() == n, "brinkman_backward: shape mismatch");
  BrinkmanGrads g{VectorField(n), ScalarField(n, 0.0), VectorField(n)};
  parallel_for(ssize(n), [&](std::ptrdiff_t ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double c = dt * lambda * chi[i];
    const double inv = 1.0 / (1.0 + c);
    double dc = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double gb = d_u_b.c[d][i];
      g.d_u_tilde.c[d][i] = gb * inv;
      g.d_u_solid.c[d][i] = gb * c * inv;
      dc += gb * (u_solid.c[d][i] - u_tilde.c[d][i]) * inv * inv;
    }
    g.d_chi[i] = dc * dt * lambda;
  });
  return g;
}

// -- advection ---------------------------------------------------------------

namespace {

struct Axis {
  int i0 = 0, i1 = 0;
  double f = 0.0;
  bool active = false;  // derivative w.r.t. the backtrace coordinate is nonzero
};

inline Axis locate_axis(double g, int n) {
  Axis a;
  if (n == 1) return a;
  const double hi = static_cast<double>(n - 1);
  a.active = g >= 0.0 && g <= hi;
  const double gc = std::clamp(g, 0.0, hi);
  a.i0 = std::min(static_cast<int>(std::floor(gc)), n - 2);
  a.i1 = a.i0 + 1;
  a.f = gc - a.i0;
  return a;
}

struct Stencil {
  std::array<std::size_t, 8> idx;
  std::array<double, 8> w;
  std::array<Axis, 3> ax;
};

inline Stencil backtrace(const GridSpec& spec, std::size_t cell, const Vec3& vel, double dt) {
  const auto c = spec.coords(cell);
  Stencil s;
  for (int d = 0; d < 3; ++d) s.ax[d] = locate_axis(c[d] - dt * vel[d] / spec.h, spec.dims[d]);
  int n = 0;
  for (int kz = 0; kz < 2; ++kz)
    for (int ky = 0; ky < 2; ++ky)
      for (int kx = 0; kx < 2; ++kx, ++n) {
        s.idx[n] = spec.index(kx ? s.ax[0].i1 : s.ax[0].i0, ky ? s.ax[1].i1 : s.ax[1].i0,
                              kz ? s.ax[2].i1 : s.ax[2].i0);
        s.w[n] = (kx ? s.ax[0].f : 1.0 - s.ax[0].f) * (ky ? s.ax[1].f : 1.0 - s.ax[1].f) *
                 (kz ? s.ax[2].f : 1.0 - s.ax[2].f);
      }
  return s;
}

inline double sample(const Stencil& s, const ScalarField& f) {
  double v = 0.0;
  for (int n = 0; n < 8; ++n) v += s.w[n] * f[s.idx[n]];
  return v;
}

// d sample / d (index coordinate), zero along inactive axes.
inline Vec3 sample_gradient(const Stencil& s, const ScalarField& f) {
  Vec3 g = Vec3::Zero();
  const double fx = s.ax[0].f, fy = s.ax[1].f, fz = s.ax[2].f;
  int n = 0;
  for (int kz = 0; kz < 2; ++kz)
    for (int ky = 0; ky < 2; ++ky)
      for (int kx = 0; kx < 2; ++kx, ++n) {
        const double v = f[s.idx[n]];
        const double wx = kx ? fx : 1.0 - fx, wy = ky ? fy : 1.0 - fy, wz = kz ? fz : 1.0 - fz;
        g[0] += (kx ? 1.0 : -1.0) * wy * wz * v;
        g[1] += wx * (ky ? 1.0 : -1.0) * wz * v;
        g[2] += wx * wy * (kz ? 1.0 : -1.0) * v;
      }
  for (int d = 0; d < 3; ++d)
    if (!s.ax[d].active) g[d] = 0.0;
  return g;
}

}  // namespace

ScalarField advect(const ScalarField& field, const VectorField& u, double dt, const GridSpec& spec) {
  require(field.size() == spec.cell_count() && u.size() == spec.cell_count(), "advect: shape mismatch");
  ScalarField out(field.size());
  parallel_for(ssize(field.size()), [&](std::ptrdiff_t c) {
    const std::size_t i = static_cast<std::size_t>(c);
    out[i] = sample(backtrace(spec, i, u.at(i), dt), field);
  });
  return out;
}

VectorField advect(const VectorField& field, const VectorField& u, double dt, const GridSpec& spec) {
  require(field.size() == spec.cell_count() && u.size() == spec.cell_count(), "advect: shape mismatch");
  VectorField out(field.size());
  parallel_for(ssize(field.size()), [&](std::ptrdiff_t c) {
    const std::size_t i = static_cast<std::size_t>(c);
    const Stencil s = backtrace(spec, i, u.at(i), dt);
    for (int d = 0; d < 3; ++d) out.c[d][i] = sample(s, field.c[d]);
  });
  return out;
}

void advect_backward(const ScalarField& d_out, const ScalarField& field, const VectorField& u,
                     double dt, const GridSpec& spec, ScalarField& d_field, VectorField& d_u) {
  const std::size_t n = spec.cell_count();
  require(d_out.size() == n && field.size() == n && d_field.size() == n && d_u.size() == n,
          "advect_backward: shape mismatch");
  const double k = -dt / spec.h;
  // Serial scatter keeps the accumulation order fixed.
  for (std::size_t i = 0; i < n; ++i) {
    const double g = d_out[i];
    if (g == 0.0) continue;
    const Stencil s = backtrace(spec, i, u.at(i), dt);
    for (int m = 0; m < 8; ++m) d_field[s.idx[m]] += s.w[m] * g;
    const Vec3 dg = sample_gradient(s, field);
    for (int d = 0; d < 3; ++d) d_u.c[d][i] += g * dg[d] * k;
  }
}

void advect_backward(const VectorField& d_out, const VectorField& field, const VectorField& u,
                     double dt, const GridSpec& spec, VectorField& d_field, VectorField& d_u) {
  const std::size_t n = spec.cell_count();
  require(d_out.size() == n && field.size() == n && d_field.size() == n && d_u.size() == n,
          "advect_backward: shape mismatch");
  const double k = -dt / spec.h;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 g = d_out.at(i);
    if (g.isZero(0.0)) continue;
    const Stencil s = backtrace(spec, i, u.at(i), dt);
    Vec3 du = Vec3::Zero();
    for (int comp = 0; comp < 3; ++comp) {
      if (g[comp] == 0.0) continue;
      for (int m = 0; m < 8; ++m) d_field.c[comp][s.idx[m]] += s.w[m] * g[comp];
      du += g[comp] * sample_gradient(s, field.c[comp]);
    }
    for (int d = 0; d < 3; ++d) d_u.c[d][i] += du[d] * k;
  }
}

// -- projection --------------------------------------------------------------

VectorField gradient(const ScalarField& p, const GridSpec& spec) {
  require(p.size() == spec.cell_count(), "gradient: shape mismatch");
  VectorField g(p.size());
  const double inv2h = 0.5 / spec.h;
  const auto& n = spec.dims;
  parallel_for(n[2], [&](std::ptrdiff_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const std::size_t c = spec.index(i, j, k);
        g.c[0][c] = (p[spec.index(std::min(i + 1, n[0] - 1), j, k)] - p[spec.index(std::max(i - 1, 0), j, k)]) * inv2h;
        g.c[1][c] = (p[spec.index(i, std::min(j + 1, n[1] - 1), k)] - p[spec.index(i, std::max(j - 1, 0), k)]) * inv2h;
        g.c[2][c] = (p[spec.index(i, j, std::min(k + 1, n[2] - 1))] - p[spec.index(i, j, std::max(k - 1, 0))]) * inv2h;
      }
  });
  return g;
}

namespace {

// One axis of D = -G^T at index j of an axis with n cells.
inline double div_axis(const ScalarField& u, std::size_t c, std::ptrdiff_t stride, int j, int n) {
  double v = 0.0;
  if (j <= n - 2) v += u[c + static_cast<std::size_t>(stride)];
  if (j == 0) v += u[c];
  if (j >= 1) v -= u[c - static_cast<std::size_t>(stride)];
  if (j == n - 1) v -= u[c];
  return v;
}

}  // namespace

ScalarField divergence(const VectorField& u, const GridSpec& spec) {
  require(u.size() == spec.cell_count(), "divergence: shape mismatch");
  ScalarField out(u.size());
  const double inv2h = 0.5 / spec.h;
  const auto& n = spec.dims;
  const std::ptrdiff_t sx = 1, sy = n[0], sz = static_cast<std::ptrdiff_t>(n[0]) * n[1];
  parallel_for(n[2], [&](std::ptrdiff_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const std::size_t c = spec.index(i, j, k);
        out[c] = (div_axis(u.c[0], c, sx, i, n[0]) + div_axis(u.c[1], c, sy, j, n[1]) +
                  div_axis(u.c[2], c, sz, k, n[2])) * inv2h;
      }
  });
  return out;
}

ProjectResult project(const VectorField& u_hat, const GridSpec& spec, const SimParams& params) {
  const std::size_t n = spec.cell_count();
  require(u_hat.size() == n, "project: shape mismatch");
  ProjectResult res;
  // Solve M p = b with M = -div grad (PSD, constants in the null space), b = -div u_hat.
  ScalarField b = divergence(u_hat, spec);
  for (double& v : b) v = -v;
  const double mean = deterministic_sum(ssize(n), 0.0, [&](std::ptrdiff_t i) { return b[static_cast<std::size_t>(i)]; }) /
                      static_cast<double>(n);
  for (double& v : b) v -= mean;
  ScalarField x(n, 0.0);
  const double bnorm = max_abs(b);
  if (bnorm > 0.0) {
    const int max_iters = params.cg_max_iters > 0 ? params.cg_max_iters : 10 * spec.longest_axis();
    ScalarField r = b, d = b, md(n);
    double rr = dot(r, r);
    bool converged = false;
    int it = 0;
    auto apply = [&](const ScalarField& v) {
      ScalarField out = divergence(gradient(v, spec), spec);
      for (double& o : out) o = -o;
      return out;
    };
    for (; it < max_iters; ++it) {
      md = apply(d);
      const double dmd = dot(d, md);
      if (!(dmd > 0.0)) break;
      const double alpha = rr / dmd;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * d[i];
        r[i] -= alpha * md[i];
      }
      res.residual = max_abs(r) / bnorm;
      if (res.residual <= params.cg_tol) {
        converged = true;
        ++it;
        break;
      }
      const double rr_new = dot(r, r);
      const double beta = rr_new / rr;
      rr = rr_new;
      for (std::size_t i = 0; i < n; ++i) d[i] = r[i] + beta * d[i];
    }
    res.iterations = it;
    if (!converged)
      throw SolverFailure("pressure CG did not converge: residual " + std::to_string(res.residual) +
                              " after " + std::to_string(it) + " iterations",
                          res.residual, it);
    const double pm = deterministic_sum(ssize(n), 0.0, [&](std::ptrdiff_t i) { return x[static_cast<std::size_t>(i)]; }) /
                      static_cast<double>(n);
    for (double& v : x) v -= pm;
  }
  const VectorField gp = gradient(x, spec);
  res.u = u_hat;
  for (int d = 0; d < 3; ++d)
    for (std::size_t i = 0; i < n; ++i) res.u.c[d][i] -= gp.c[d][i];
  res.p = std::move(x);
  return res;
}

VectorField project_backward(const VectorField& d_u_next, const GridSpec& spec, const SimParams& params) {
  return project(d_u_next, spec, params).u;
}

// -- step --------------------------------------------------------------------

FluidState step(const FluidState& s, std::span<const double> chi, const VectorField& u_solid,
                const SimParams& params, const GridSpec& spec, StepRecord* record) {
  const std::size_t n = spec.cell_count();
  require(s.u.size() == n && s.rho.size() == n && chi.size() == n && u_solid.size() == n,
          "fluid step: inputs not on the same grid");
  VectorField u_tilde = apply_forces(s.u, body_force(s, params), params.dt);
  VectorField u_b = brinkman_step(u_tilde, chi, u_solid, params.dt, params.lambda);
  VectorField u_hat = advect(u_b, u_b, params.dt, spec);
  ProjectResult proj = project(u_hat, spec, params);
  ScalarField rho = advect(s.rho, u_b, params.dt, spec);

  FluidState next;
  next.u = std::move(proj.u);
  next.p = std::move(proj.p);
  next.rho.resize(n);
  for (std::size_t i = 0; i < n; ++i) next.rho[i] = std::max(rho[i], 0.0);
  next.t = s.t + 1;
  if (record) {
    record->u_tilde = std::move(u_tilde);
    record->u_b = std::move(u_b);
    record->rho_pre_clamp = std::move(rho);
    record->cg_iterations = proj.iterations;
  }
  return next;
}

StepGrads step_backward(const FluidState& s, std::span<const double> chi, const VectorField& u_solid,
                        const StepRecord& rec, const VectorField& d_u_next,
                        const ScalarField& d_rho_next, const VectorField* extra_d_u_b,
                        const VectorField* extra_d_u_tilde, const SimParams& params,
                        const GridSpec& spec) {
  const std::size_t n = spec.cell_count();
  require(d_u_next.size() == n && d_rho_next.size() == n, "step_backward: cotangent shape mismatch");
  require(rec.u_b.size() == n && rec.u_tilde.size() == n, "step_backward: incomplete step record");
  const double dt = params.dt;

  VectorField d_u_b(n);
  StepGrads out;
  out.d_rho.assign(n, 0.0);

  // rho_next = max(A(rho; u_B), 0): subgradient 0 where the clamp is active.
  ScalarField d_rho_adv(n);
  for (std::size_t i = 0; i < n; ++i) d_rho_adv[i] = rec.rho_pre_clamp[i] >= 0.0 ? d_rho_next[i] : 0.0;
  advect_backward(d_rho_adv, s.rho, rec.u_b, dt, spec, out.d_rho, d_u_b);

  const VectorField d_u_hat = project_backward(d_u_next, spec, params);
  advect_backward(d_u_hat, rec.u_b, rec.u_b, dt, spec, d_u_b, d_u_b);
  if (extra_d_u_b)
    for (int d = 0; d < 3; ++d)
      for (std::size_t i = 0; i < n; ++i) d_u_b.c[d][i] += extra_d_u_b->c[d][i];

  BrinkmanGrads bg = brinkman_backward(d_u_b, rec.u_tilde, chi, u_solid, dt, params.lambda);
  if (extra_d_u_tilde)
    for (int d = 0; d < 3; ++d)
      for (std::size_t i = 0; i < n; ++i) bg.d_u_tilde.c[d][i] += extra_d_u_tilde->c[d][i];

  out.d_u = bg.d_u_tilde;
  if (params.dye_buoyancy)
    for (std::size_t i = 0; i < n; ++i)
      out.d_rho[i] += dt * (params.gravity[0] * bg.d_u_tilde.c[0][i] + params.gravity[1] * bg.d_u_tilde.c[1][i] +
                            params.gravity[2] * bg.d_u_tilde.c[2][i]);
  out.d_chi = std::move(bg.d_chi);
  out.d_u_solid = std::move(bg.d_u_solid);
  out.d_u_tilde = std::move(bg.d_u_tilde);
  return out;
}

FluidDiagnostics diagnostics(const FluidState& s, const SimParams& params, const GridSpec& spec) {
  FluidDiagnostics d;
  d.max_divergence = max_abs(divergence(s.u, spec));
  const double h3 = spec.h * spec.h * spec.h;
  const auto n = ssize(spec.cell_count());
  d.dye_mass = h3 * deterministic_sum(n, 0.0, [&](std::ptrdiff_t i) { return s.rho[static_cast<std::size_t>(i)]; });
  d.kinetic_energy = 0.5 * params.rho0 * h3 *
                     deterministic_sum(n, 0.0, [&](std::ptrdiff_t i) { return s.u.at(static_cast<std::size_t>(i)).squaredNorm(); });
  return d;
}

}  // namespace pgs
