#include "pgs/adjoint.hpp"

#include "pgs/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace pgs {

void validate(const SimSetup& s) {
  validate(s.grid);
  validate(s.sim);
  validate(s.rigid0);
  if (s.steps < 0) throw InvalidParameter("steps must be >= 0");
  if (s.stride < 1) throw InvalidParameter("checkpoint stride must be >= 1");
  if (s.mask.tile < 1 || !(s.mask.kappa > 0)) throw InvalidParameter("mask tile >= 1 and kappa > 0 required");
  const std::size_t n = s.grid.cell_count();
  if (s.fluid0.u.size() != n || s.fluid0.rho.size() != n || s.fluid0.p.size() != n)
    throw InvalidParameter("initial fluid state does not match the grid");
  if (s.body.mode == BodyMode::Static && (s.rigid0.v != Vec3::Zero() || s.rigid0.L != Vec3::Zero()))
    throw InvalidParameter("static bodies need v = 0 and L = 0");
  if (s.body.mode == BodyMode::Translating && s.rigid0.L != Vec3::Zero())
    throw InvalidParameter("translating bodies need L = 0");
}

StateCotangent StateCotangent::zeros(const GridSpec& spec) {
  StateCotangent c;
  c.d_u.resize(spec.cell_count());
  c.d_rho.assign(spec.cell_count(), 0.0);
  return c;
}

int stored_state_bound(int steps, int stride) { return (steps + stride - 1) / stride + stride; }

void Tape::hold(int n) {
  stored_ += n;
  peak_ = std::max(peak_, stored_);
}

Tape record(const GaussianSet& body, const SimSetup& setup, const StateObserver& observe, bool keep_fluid) {
  validate(setup);
  Tape tape;
  tape.setup_ = setup;
  tape.body_ = body;
  tape.traj_.spec = setup.grid;
  const bool is_static = setup.body.mode == BodyMode::Static;
  if (is_static) tape.static_mask_ = posed_mask(body, setup.rigid0, setup.body.x_ref, setup.grid, setup.mask);

  FluidState fluid = setup.fluid0;
  RigidState rigid = setup.rigid0;
  tape.traj_.rigid_states.push_back(rigid);
  if (keep_fluid) tape.traj_.fluid_states.push_back(fluid);
  if (observe) observe(0, fluid, rigid);
  CoupledRecord rec;
  for (int t = 0; t < setup.steps; ++t) {
    if (t % setup.stride == 0) {
      tape.checkpoints_.emplace(t, std::make_pair(fluid, rigid));
      tape.hold(1);
    }
    auto [f, r] = coupled_step(fluid, rigid, body, setup.sim, setup.body, setup.grid, setup.mask, &rec,
                               is_static ? &tape.static_mask_ : nullptr);
    tape.cg_iters_ += rec.fluid.cg_iterations;
    tape.traj_.forces.push_back(rec.forces);
    tape.traj_.integrate.push_back(rec.integrate);
    fluid = std::move(f);
    rigid = r;
    tape.traj_.rigid_states.push_back(rigid);
    if (keep_fluid) tape.traj_.fluid_states.push_back(fluid);
    if (observe) observe(t + 1, fluid, rigid);
  }
  tape.complete_ = true;
  return tape;
}

namespace {

void accumulate(StateCotangent& ct, const CoupledGrads& g) {
  ct.d_u = g.d_u;
  ct.d_rho = g.d_rho;
  ct.d_rigid = g.d_rigid;
}

}  // namespace

GradBuffer backward(Tape& tape, const CotangentFn& seeds, StateCotangent* initial) {
  require(tape.complete_, "backward: tape is incomplete");
  const SimSetup& s = tape.setup_;
  const GridSpec& spec = s.grid;
  const bool is_static = s.body.mode == BodyMode::Static;
  GradBuffer grads = GradBuffer::zeros_like(tape.body_);
  const int steps = s.steps;

  StateCotangent ct = StateCotangent::zeros(spec);
  if (seeds) seeds(steps, ct);
  ScalarField static_dchi;
  if (is_static) static_dchi.assign(spec.cell_count(), 0.0);

  std::vector<std::pair<FluidState, RigidState>> seg;
  std::vector<CoupledRecord> recs;
  for (auto it = tape.checkpoints_.rbegin(); it != tape.checkpoints_.rend(); ++it) {
    const int t0 = it->first;
    const int t1 = std::min(t0 + s.stride, steps);
    // Recompute the segment from its checkpoint.
    seg.clear();
    recs.assign(static_cast<std::size_t>(t1 - t0), CoupledRecord{});
    FluidState fluid = it->second.first;
    RigidState rigid = it->second.second;
    for (int t = t0; t < t1; ++t) {
      seg.emplace_back(fluid, rigid);
      tape.hold(1);
      auto [f, r] = coupled_step(fluid, rigid, tape.body_, s.sim, s.body, spec, s.mask,
                                 &recs[static_cast<std::size_t>(t - t0)],
                                 is_static ? &tape.static_mask_ : nullptr);
      fluid = std::move(f);
      rigid = r;
    }
    for (int t = t1 - 1; t >= t0; --t) {
      const auto k = static_cast<std::size_t>(t - t0);
      const auto& [fs, rs] = seg[k];
      const CoupledRecord& rec = recs[k];
      const OccupancyGrid& mask = is_static ? tape.static_mask_ : rec.mask;
      CoupledGrads g = coupled_step_backward(fs, rs, rec, mask, ct.d_u, ct.d_rho, ct.d_rigid, s.sim, s.body, spec);
      if (is_static) {
        for (std::size_t i = 0; i < static_dchi.size(); ++i) static_dchi[i] += g.d_chi[i];
      } else {
        posed_mask_backward(mask, g.d_chi, tape.body_, rs, s.body.x_ref, grads, g.d_rigid.x, g.d_rigid.q);
      }
      accumulate(ct, g);
      if (seeds) seeds(t, ct);
    }
    tape.stored_ -= static_cast<int>(seg.size());
    seg.clear();
    recs.clear();
  }
  if (is_static && steps > 0) {
    Vec3 dx = Vec3::Zero();
    Vec4 dq = Vec4::Zero();
    posed_mask_backward(tape.static_mask_, static_dchi, tape.body_, s.rigid0, s.body.x_ref, grads, dx, dq);
    ct.d_rigid.x += dx;
    ct.d_rigid.q += dq;
  }
  if (initial) *initial = std::move(ct);
  if (!grads.all_finite()) throw std::runtime_error("backward produced non-finite gradients");
  return grads;
}

std::array<double, 5> GradReport::group_max_rel() const {
  std::array<double, 5> m{};
  for (const auto& r : rows)
    if (!r.flagged) {
      auto& v = m[static_cast<std::size_t>(r.group)];
      v = std::max(v, r.rel_error);
    }
  return m;
}

void GradReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "group,index,analytic,numeric,rel_error,flagged\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << group_name(r.group) << ',' << r.index << ',' << r.analytic << ',' << r.numeric << ',' << r.rel_error
        << ',' << (r.flagged ? 1 : 0) << '\n';
}

GradReport gradcheck(const LossFn& loss, const GaussianSet& theta, const GradBuffer& analytic,
                     const GradCheckOptions& opt) {
  require(analytic.same_shape(theta), "gradcheck: gradient shape mismatch");
  require(opt.eps > 0, "gradcheck: eps must be positive");
  GradReport rep;
  double amax = 0.0;
  for (ParamGroup g : kAllGroups) {
    rep.group_norm[static_cast<std::size_t>(g)] = analytic.group_norm(g);
    for (double v : analytic.group(g)) amax = std::max(amax, std::abs(v));
  }
  const double floor = opt.floor * amax;
  std::mt19937_64 rng(opt.seed);
  GaussianSet probe = theta;
  for (ParamGroup g : kAllGroups) {
    const std::size_t n = theta.group(g).size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opt.per_group > 0 && opt.per_group < n) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.per_group);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double x0 = theta.group(g)[i];
      probe.group(g)[i] = x0 + opt.eps;
      const double fp = loss(probe);
      probe.group(g)[i] = x0 - opt.eps;
      const double fm = loss(probe);
      probe.group(g)[i] = x0;
      GradCheckRow row{g, i, analytic.group(g)[i], (fp - fm) / (2.0 * opt.eps), 0.0, false};
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        row.flagged = true;
        row.rel_error = std::numeric_limits<double>::infinity();
        ++rep.flagged;
      } else {
        const double den = std::max({std::abs(row.analytic), std::abs(row.numeric), floor});
        row.rel_error = den > 0 ? std::abs(row.analytic - row.numeric) / den : 0.0;
      }
      rep.rows.push_back(row);
    }
  }
  std::vector<double> errs;
  for (const auto& r : rep.rows)
    if (!r.flagged) errs.push_back(r.rel_error);
  if (!errs.empty()) {
    rep.max_rel = *std::max_element(errs.begin(), errs.end());
    std::sort(errs.begin(), errs.end());
    const std::size_t m = errs.size();
    rep.median_rel = m % 2 ? errs[m / 2] : 0.5 * (errs[m / 2 - 1] + errs[m / 2]);
  }
  return rep;
}

}  // namespace pgs
