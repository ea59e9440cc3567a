#include "pgs/rigid.hpp"

#include "pgs/common.hpp"
#include "pgs/quaternion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>
#include <string>

namespace pgs {

BodyMode parse_body_mode(std::string_view s) {
  if (s == "static") return BodyMode::Static;
  if (s == "translating") return BodyMode::Translating;
  if (s == "full") return BodyMode::Full;
  throw InvalidParameter("unknown body mode '" + std::string(s) + "' (static|translating|full)");
}

std::string_view to_string(BodyMode m) {
  switch (m) {
    case BodyMode::Static: return "static";
    case BodyMode::Translating: return "translating";
    case BodyMode::Full: return "full";
  }
  return "?";
}

void validate(const RigidState& s) {
  if (std::abs(s.q.norm() - 1.0) > 1e-9) throw InvalidParameter("rigid orientation is not a unit quaternion");
  if (!(s.m > 0)) throw InvalidParameter("body mass must be positive");
  if ((s.I_body - s.I_body.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw InvalidParameter("I_body must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> es(s.I_body);
  if (es.eigenvalues().minCoeff() <= 0) throw InvalidParameter("I_body must be positive definite");
}

Mat3 world_inertia(const RigidState& s) {
  const Mat3 r = quat::to_matrix(s.q);
  return r * s.I_body * r.transpose();
}

Vec3 angular_velocity(const RigidState& s) { return world_inertia(s).llt().solve(s.L); }

VectorField solid_velocity_field(const Vec3& v, const Vec3& omega, const Vec3& x, const GridSpec& spec) {
  VectorField f(spec.cell_count());
  parallel_for(static_cast<std::ptrdiff_t>(spec.cell_count()), [&](std::ptrdiff_t c) {
    const std::size_t i = static_cast<std::size_t>(c);
    f.set(i, v + omega.cross(spec.center(i) - x));
  });
  return f;
}

VectorField solid_velocity_field(const RigidState& s, const GridSpec& spec) {
  return solid_velocity_field(s.v, angular_velocity(s), s.x, spec);
}

namespace {

bool is_identity_pose(const RigidState& s, const Vec3& x_ref) {
  return s.q == quat::identity() && s.x == x_ref;
}

}  // namespace

GaussianSet posed_gaussians(const GaussianSet& body, const RigidState& s, const Vec3& x_ref) {
  if (is_identity_pose(s, x_ref)) return body;
  GaussianSet w = body;
  const Mat3 r = quat::to_matrix(s.q);
  for (std::size_t i = 0; i < body.size(); ++i) {
    w.mean(i) = r * (body.mean(i) - x_ref) + s.x;
    w.rotation(i) = quat::multiply(s.q, body.rotation(i));
  }
  return w;
}

OccupancyGrid posed_mask(const GaussianSet& body, const RigidState& s, const Vec3& x_ref,
                         const GridSpec& spec, const MaskParams& mp) {
  if (is_identity_pose(s, x_ref)) return tiled_mask(body, spec, mp);
  return tiled_mask(posed_gaussians(body, s, x_ref), spec, mp);
}

void posed_mask_backward(const OccupancyGrid& grid, std::span<const double> dchi,
                         const GaussianSet& body, const RigidState& s, const Vec3& x_ref,
                         GradBuffer& grads, Vec3& dx, Vec4& dq) {
  const GaussianSet world = posed_gaussians(body, s, x_ref);
  GradBuffer gw = GradBuffer::zeros_like(world);
  mask_backward(grid, dchi, world, gw);
  const Mat3 r = quat::to_matrix(s.q);
  const quat::Mat4 lq = quat::left_matrix(s.q);
  Mat3 dr = Mat3::Zero();
  for (std::size_t i = 0; i < body.size(); ++i) {
    const Vec3 dmw = gw.mean(i);
    grads.mean(i) += r.transpose() * dmw;
    dx += dmw;
    dr += dmw * (body.mean(i) - x_ref).transpose();
    grads.rotation(i) += lq.transpose() * gw.rotation(i);
    dq += quat::right_matrix(body.rotation(i)).transpose() * gw.rotation(i);
    grads.log_scale(i) += gw.log_scale(i);
    grads.opacity_logits[i] += gw.opacity_logits[i];
  }
  dq += quat::to_matrix_vjp(s.q, dr);
}

BodyForces reaction_wrench(const VectorField& u_tilde, const VectorField& u_b, const RigidState& s,
                           const GridSpec& spec, const SimParams& params) {
  const std::size_t n = spec.cell_count();
  require(u_tilde.size() == n && u_b.size() == n, "reaction_wrench: shape mismatch");
  const double k = -params.rho0 * spec.h * spec.h * spec.h / params.dt;
  const auto nn = static_cast<std::ptrdiff_t>(n);
  BodyForces w;
  w.f = k * deterministic_sum(nn, Vec3(Vec3::Zero()), [&](std::ptrdiff_t c) {
          const std::size_t i = static_cast<std::size_t>(c);
          return Vec3(u_b.at(i) - u_tilde.at(i));
        });
  w.tau = k * deterministic_sum(nn, Vec3(Vec3::Zero()), [&](std::ptrdiff_t c) {
            const std::size_t i = static_cast<std::size_t>(c);
            return Vec3((spec.center(i) - s.x).cross(u_b.at(i) - u_tilde.at(i)));
          });
  return w;
}

void angular_coefficients(const VectorField& u_tilde, std::span<const double> chi, const RigidState& s,
                          const GridSpec& spec, const SimParams& params, Vec3& tau0, Mat3& K) {
  const std::size_t n = spec.cell_count();
  require(u_tilde.size() == n && chi.size() == n, "angular_coefficients: shape mismatch");
  const double h3 = spec.h * spec.h * spec.h;
  const double dl = params.dt * params.lambda;
  const auto nn = static_cast<std::ptrdiff_t>(n);
  auto alpha = [&](std::size_t i) { return params.rho0 * params.lambda * chi[i] / (1.0 + dl * chi[i]); };
  tau0 = -h3 * deterministic_sum(nn, Vec3(Vec3::Zero()), [&](std::ptrdiff_t c) {
           const std::size_t i = static_cast<std::size_t>(c);
           const Vec3 r = spec.center(i) - s.x;
           return Vec3(r.cross(alpha(i) * (s.v - u_tilde.at(i))));
         });
  K = h3 * deterministic_sum(nn, Mat3(Mat3::Zero()), [&](std::ptrdiff_t c) {
        const std::size_t i = static_cast<std::size_t>(c);
        const Vec3 r = spec.center(i) - s.x;
        return Mat3(alpha(i) * (r * r.transpose() - r.squaredNorm() * Mat3::Identity()));
      });
}

RigidState integrate(const RigidState& s, const BodyForces& w, double dt, BodyMode mode, IntegrateInfo* info) {
  RigidState out = s;
  if (mode == BodyMode::Static) return out;
  out.v = s.v + dt * (w.f + w.f_ext) / s.m;
  out.x = s.x + dt * out.v;
  if (mode == BodyMode::Translating) return out;

  const Mat3 iw = world_inertia(s);
  const Mat3 a = iw - dt * w.K;
  Eigen::LLT<Mat3> llt(a);
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (a + a.transpose()));
  const double min_eig = es.eigenvalues().minCoeff();
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "internal error: I_w - dt K is not SPD (eigenvalues " << es.eigenvalues().transpose()
        << ", condition " << es.eigenvalues().maxCoeff() / min_eig << ")";
    throw std::runtime_error(msg.str());
  }
  const Vec3 omega = llt.solve(s.L + dt * w.tau0);
  out.L = iw * omega;
  const Vec4 dq = quat::exp_map(omega * dt);
  const Vec4 qt = quat::multiply(dq, s.q);
  out.q = qt / qt.norm();
  if (info) {
    info->cholesky_ok = true;
    info->min_eigenvalue = min_eig;
    info->omega_next = omega;
    info->dq = dq;
    info->q_unnormalized = qt;
  }
  return out;
}

std::pair<FluidState, RigidState> coupled_step(const FluidState& fluid, const RigidState& rigid,
                                               const GaussianSet& body, const SimParams& params,
                                               const BodyConfig& cfg, const GridSpec& spec,
                                               const MaskParams& mp, CoupledRecord* rec,
                                               const OccupancyGrid* fixed_mask) {
  CoupledRecord local;
  CoupledRecord& r = rec ? *rec : local;
  if (!fixed_mask) r.mask = posed_mask(body, rigid, cfg.x_ref, spec, mp);
  const OccupancyGrid& mask = fixed_mask ? *fixed_mask : r.mask;

  r.omega = cfg.mode == BodyMode::Full ? angular_velocity(rigid) : Vec3::Zero();
  if (cfg.mode == BodyMode::Static)
    r.u_solid = VectorField(spec.cell_count());
  else
    r.u_solid = solid_velocity_field(rigid.v, r.omega, rigid.x, spec);

  FluidState next_fluid = step(fluid, mask.chi, r.u_solid, params, spec, &r.fluid);
  r.forces = reaction_wrench(r.fluid.u_tilde, r.fluid.u_b, rigid, spec, params);
  if (cfg.mode == BodyMode::Full)
    angular_coefficients(r.fluid.u_tilde, mask.chi, rigid, spec, params, r.forces.tau0, r.forces.K);
  r.forces.f_ext = cfg.thrust + rigid.m * cfg.gravity;
  r.integrate = IntegrateInfo{};
  RigidState next_rigid = integrate(rigid, r.forces, params.dt, cfg.mode, &r.integrate);
  return {std::move(next_fluid), next_rigid};
}

CoupledGrads coupled_step_backward(const FluidState& fluid, const RigidState& rigid,
                                   const CoupledRecord& rec, const OccupancyGrid& mask,
                                   const VectorField& d_u_next, const ScalarField& d_rho_next,
                                   const RigidCotangent& d_next, const SimParams& params,
                                   const BodyConfig& cfg, const GridSpec& spec) {
  const std::size_t n = spec.cell_count();
  const double dt = params.dt;
  const double h3 = spec.h * spec.h * spec.h;
  const auto& chi = mask.chi;
  CoupledGrads out;
  RigidCotangent& dr = out.d_rigid;
  VectorField extra_ub(n), extra_ut(n);
  ScalarField d_chi_alpha(n, 0.0);
  Vec3 d_omega = Vec3::Zero();
  Mat3 d_iw = Mat3::Zero();
  const Mat3 rot = quat::to_matrix(rigid.q);
  const Mat3 iw = rot * rigid.I_body * rot.transpose();

  if (cfg.mode == BodyMode::Static) {
    dr = d_next;
  } else {
    dr.x += d_next.x;
    const Vec3 dv_total = d_next.v + dt * d_next.x;
    dr.v += dv_total;
    const Vec3 df = dt / rigid.m * dv_total;
    // f = -rho0 h^3/dt * sum(u_B - u~)
    const Vec3 kf = params.rho0 * h3 / dt * df;
    for (int d = 0; d < 3; ++d)
      for (std::size_t i = 0; i < n; ++i) {
        extra_ub.c[d][i] -= kf[d];
        extra_ut.c[d][i] += kf[d];
      }

    if (cfg.mode == BodyMode::Translating) {
      dr.q += d_next.q;
      dr.L += d_next.L;
    } else {
      const IntegrateInfo& info = rec.integrate;
      const double nq = info.q_unnormalized.norm();
      const Vec4 qn = info.q_unnormalized / nq;
      const Vec4 dqt = (d_next.q - qn * qn.dot(d_next.q)) / nq;
      dr.q += quat::left_matrix(info.dq).transpose() * dqt;
      const Vec4 d_dq = quat::right_matrix(rigid.q).transpose() * dqt;
      Vec3 d_wn = dt * quat::exp_map_jacobian(info.omega_next * dt).transpose() * d_dq;
      d_wn += iw.transpose() * d_next.L;
      d_iw += d_next.L * info.omega_next.transpose();
      const Mat3 a = iw - dt * rec.forces.K;
      const Vec3 db = a.transpose().llt().solve(d_wn);
      const Mat3 da = -db * info.omega_next.transpose();
      d_iw += da;
      const Mat3 dk = -dt * da;
      dr.L += db;
      const Vec3 dtau0 = dt * db;
      const Mat3 dk_sym = dk + dk.transpose();
      const double dk_tr = dk.trace();
      const double dl = dt * params.lambda;
      const VectorField& ut = rec.fluid.u_tilde;
      for (std::size_t i = 0; i < n; ++i) {
        const double den = 1.0 + dl * chi[i];
        const double alpha = params.rho0 * params.lambda * chi[i] / den;
        const Vec3 r = spec.center(i) - rigid.x;
        const Vec3 d = rigid.v - ut.at(i);
        const double dalpha = -h3 * dtau0.dot(r.cross(d)) +
                              h3 * (dk.cwiseProduct(r * r.transpose()).sum() - dk_tr * r.squaredNorm());
        const Vec3 dr_c = -h3 * alpha * d.cross(dtau0) + h3 * alpha * (dk_sym * r - 2.0 * dk_tr * r);
        const Vec3 dd = -h3 * alpha * dtau0.cross(r);
        dr.v += dd;
        for (int k = 0; k < 3; ++k) extra_ut.c[k][i] -= dd[k];
        dr.x -= dr_c;
        d_chi_alpha[i] = dalpha * params.rho0 * params.lambda / (den * den);
      }
    }
  }

  StepGrads sg = step_backward(fluid, chi, rec.u_solid, rec.fluid, d_u_next, d_rho_next, &extra_ub, &extra_ut,
                               params, spec);

  if (cfg.mode != BodyMode::Static) {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 dus = sg.d_u_solid.at(i);
      dr.v += dus;
      if (cfg.mode == BodyMode::Full) {
        const Vec3 r = spec.center(i) - rigid.x;
        d_omega += r.cross(dus);
        dr.x -= dus.cross(rec.omega);
      }
    }
  }
  if (cfg.mode == BodyMode::Full) {
    const Vec3 t = iw.transpose().llt().solve(d_omega);
    dr.L += t;
    d_iw -= t * rec.omega.transpose();
    const Mat3 drot = d_iw * rot * rigid.I_body.transpose() + d_iw.transpose() * rot * rigid.I_body;
    dr.q += quat::to_matrix_vjp(rigid.q, drot);
  }

  out.d_u = std::move(sg.d_u);
  out.d_rho = std::move(sg.d_rho);
  out.d_chi = std::move(sg.d_chi);
  for (std::size_t i = 0; i < n; ++i) out.d_chi[i] += d_chi_alpha[i];
  return out;
}

}  // namespace pgs
