#include "pgs/optimize.hpp"

#include "pgs/common.hpp"
#include "pgs/scene_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace pgs {

double LearningRates::of(ParamGroup g) const {
  switch (g) {
    case ParamGroup::Means: return means;
    case ParamGroup::Rotations: return rotations;
    case ParamGroup::LogScales: return log_scales;
    case ParamGroup::OpacityLogits: return opacity_logits;
    case ParamGroup::Sh: return sh;
  }
  return 0.0;
}

void validate(const TrainConfig& c) {
  if (c.iters_vis < 0 || c.iters_joint < 0) throw InvalidParameter("iteration counts must be >= 0");
  for (ParamGroup g : kAllGroups)
    if (!(c.lr.of(g) > 0)) throw InvalidParameter("learning rate for " + std::string(group_name(g)) + " must be > 0");
  if (c.phys_every < 1) throw InvalidParameter("phys_every must be >= 1");
  if (c.horizon < 0) throw InvalidParameter("horizon must be >= 0");
  if (c.lambda_phys < 0) throw InvalidParameter("lambda_phys must be >= 0");
  if (c.w_ssim < 0 || c.w_ssim > 1) throw InvalidParameter("w_ssim must be in [0,1]");
  if (c.views_per_iter < 0) throw InvalidParameter("views_per_iter must be >= 0");
  if (c.checkpoint_every < 0) throw InvalidParameter("checkpoint_every must be >= 0");
}

Adam::Adam(const GaussianSet& shape, const LearningRates& lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(GradBuffer::zeros_like(shape)), v_(GradBuffer::zeros_like(shape)) {}

void Adam::step(GaussianSet& theta, const GradBuffer& g) {
  require(g.same_shape(theta) && m_.same_shape(theta), "Adam: shape mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (ParamGroup grp : kAllGroups) {
    auto p = theta.group(grp);
    auto gg = g.group(grp);
    auto m = m_.group(grp);
    auto v = v_.group(grp);
    const double lr = lr_.of(grp);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * gg[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * gg[i] * gg[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  normalize_rotations(theta);
}

LossTerms evaluate(const TrainScenario& sc, const TrainConfig& cfg, const GaussianSet& theta, const EvalRequest& req) {
  LossTerms out;
  out.g_vis = GradBuffer::zeros_like(theta);
  out.g_phys = GradBuffer::zeros_like(theta);
  out.g_reg = GradBuffer::zeros_like(theta);
  if (!req.views.empty()) {
    const double w = 1.0 / static_cast<double>(req.views.size());
    for (int v : req.views) {
      require(v >= 0 && static_cast<std::size_t>(v) < sc.cameras.size(), "evaluate: view index out of range");
      const Camera& cam = sc.cameras[static_cast<std::size_t>(v)];
      const RenderTarget rt = render(theta, cam);
      VisualLoss vl = visual_loss(rt.image, sc.targets[static_cast<std::size_t>(v)], cfg.w_ssim, req.gradients);
      out.vis += w * vl.loss;
      out.ssim += w * vl.ssim;
      if (req.gradients) {
        for (double& g : vl.grad.rgb) g *= w;
        render_backward(rt, theta, cam, vl.grad, out.g_vis);
      }
    }
  }
  if (req.physics) {
    SimSetup setup = sc.sim;
    setup.steps = cfg.horizon;
    PhysicsObjective obj(sc.objective, setup);
    FluidState last;
    const StateObserver inner = obj.observer();
    const int steps = setup.steps;
    Tape tape = record(
        theta, setup,
        [&](int t, const FluidState& f, const RigidState& r) {
          inner(t, f, r);
          if (t == steps) last = f;
        },
        req.keep_fluid);
    out.phys = obj.value();
    out.has_phys = true;
    out.final_fluid = std::move(last);
    if (req.gradients) out.g_phys = backward(tape, obj.seeds());
    out.trajectory = tape.trajectory();
  }
  out.reg = reg_loss(theta, cfg.reg, req.gradients ? &out.g_reg : nullptr);
  return out;
}

double joint_value(const LossTerms& t, double lambda) {
  return t.vis + (lambda != 0.0 ? lambda * t.phys : 0.0) + t.reg;
}

GradBuffer joint_gradient(const LossTerms& t, double lambda) {
  GradBuffer g = t.g_vis;
  if (lambda != 0.0) g.add(t.g_phys, lambda);
  g.add(t.g_reg);
  return g;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,phase,L_vis,L_phys,L_reg,J,SSIM,grad_means,grad_rotations,grad_log_scales,grad_opacity,grad_sh,wall_s\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.iter << ',' << r.phase << ',' << r.l_vis << ',' << r.l_phys << ',' << r.l_reg << ',' << r.j << ','
        << r.ssim;
    for (double g : r.grad_norm) out << ',' << g;
    out << ',' << std::setprecision(6) << r.wall << std::setprecision(17) << '\n';
  }
}

bool TrainLog::same_values(const TrainLog& o) const {
  if (rows.size() != o.rows.size()) return false;
  auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto &a = rows[i], &b = o.rows[i];
    if (a.iter != b.iter || a.phase != b.phase || !same(a.l_vis, b.l_vis) || !same(a.l_phys, b.l_phys) ||
        !same(a.l_reg, b.l_reg) || !same(a.j, b.j) || !same(a.ssim, b.ssim) || a.grad_norm != b.grad_norm)
      return false;
  }
  return true;
}

namespace {

/// Views used at iteration `it`: a seeded permutation walked in fixed-size windows.
class ViewSchedule {
 public:
  ViewSchedule(std::size_t n, int per_iter, std::uint64_t seed) : per_(per_iter <= 0 ? n : static_cast<std::size_t>(per_iter)) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(order_.begin(), order_.end(), rng);
    per_ = std::min(per_, n);
  }
  std::vector<int> at(int it) const {
    std::vector<int> v;
    if (order_.empty()) return v;
    if (per_ == order_.size()) {
      for (std::size_t i = 0; i < order_.size(); ++i) v.push_back(static_cast<int>(i));
      return v;
    }
    const std::size_t start = static_cast<std::size_t>(it) * per_;
    for (std::size_t k = 0; k < per_; ++k) v.push_back(order_[(start + k) % order_.size()]);
    return v;
  }

 private:
  std::size_t per_;
  std::vector<int> order_;
};

}  // namespace

TrainResult train(const TrainScenario& sc, const TrainConfig& cfg, const TrainOutput& out) {
  validate(cfg);
  validate(sc.initial);
  require(sc.cameras.size() == sc.targets.size(), "train: camera/target count mismatch");
  if (out.dir) std::filesystem::create_directories(*out.dir);
  TrainResult res;
  res.final = sc.initial;
  GaussianSet& theta = res.final;
  Adam adam(theta, cfg.lr);
  const ViewSchedule views(sc.cameras.size(), cfg.views_per_iter, cfg.seed);
  const auto t_start = std::chrono::steady_clock::now();
  const int total = cfg.iters_vis + cfg.iters_joint;

  GradBuffer g_phys_cached = GradBuffer::zeros_like(theta);
  double phys_cached = std::numeric_limits<double>::quiet_NaN();

  auto checkpoint = [&](const std::string& tag) {
    if (!out.dir) return;
    save_gaussians(theta, *out.dir / ("checkpoint_" + tag + ".ply"));
    res.log.write_csv(*out.dir / "train_log.csv");
  };

  for (int it = 0; it < total; ++it) {
    const bool joint = it >= cfg.iters_vis;
    const int jit = it - cfg.iters_vis;
    double lambda = joint ? cfg.lambda_phys : 0.0;
    if (joint && cfg.lambda_ramp && cfg.iters_joint > 0)
      lambda *= static_cast<double>(jit + 1) / static_cast<double>(cfg.iters_joint);
    const bool refresh_phys = lambda != 0.0 && (jit % cfg.phys_every == 0 || std::isnan(phys_cached));
    EvalRequest req;
    req.views = views.at(it);
    req.physics = refresh_phys;
    LossTerms terms;
    try {
      terms = evaluate(sc, cfg, theta, req);
    } catch (const std::exception& e) {
      checkpoint("failed_" + std::to_string(it));
      throw TrainingFailure("iteration " + std::to_string(it) + ": " + e.what(), it);
    }
    if (refresh_phys) {
      g_phys_cached = terms.g_phys;
      phys_cached = terms.phys;
    }
    if (lambda != 0.0) {
      terms.g_phys = g_phys_cached;
      terms.phys = phys_cached;
      terms.has_phys = true;
    }
    const GradBuffer g = joint_gradient(terms, lambda);
    TrainRow row;
    row.iter = it;
    row.phase = joint ? 2 : 1;
    row.l_vis = terms.vis;
    row.l_phys = terms.has_phys ? terms.phys : std::numeric_limits<double>::quiet_NaN();
    row.l_reg = terms.reg;
    row.j = joint_value(terms, lambda);
    row.ssim = terms.ssim;
    for (ParamGroup grp : kAllGroups) row.grad_norm[static_cast<std::size_t>(grp)] = g.group_norm(grp);
    row.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (!g.all_finite()) {
      checkpoint("failed_" + std::to_string(it));
      throw TrainingFailure("iteration " + std::to_string(it) + ": non-finite gradient", it);
    }
    adam.step(theta, g);
    for (ParamGroup grp : kAllGroups)
      for (double v : theta.group(grp))
        if (!std::isfinite(v)) {
          checkpoint("failed_" + std::to_string(it));
          throw TrainingFailure("iteration " + std::to_string(it) + ": non-finite parameter", it);
        }
    res.log.rows.push_back(row);
    if (out.progress) out.progress(row);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) checkpoint(std::to_string(it + 1));
  }
  if (out.dir) {
    save_gaussians(theta, *out.dir / "final.ply");
    res.log.write_csv(*out.dir / "train_log.csv");
  }
  return res;
}

double heldout_ssim(const TrainScenario& sc, const GaussianSet& theta) {
  const auto& cams = sc.heldout_cameras.empty() ? sc.cameras : sc.heldout_cameras;
  const auto& imgs = sc.heldout_cameras.empty() ? sc.targets : sc.heldout_targets;
  require(cams.size() == imgs.size(), "heldout_ssim: camera/target count mismatch");
  if (cams.empty()) return 1.0;
  double s = 0;
  for (std::size_t v = 0; v < cams.size(); ++v) s += ssim(render(theta, cams[v]).image, imgs[v]);
  return s / static_cast<double>(cams.size());
}

SweepRow physics_metrics(const TrainScenario& sc, const TrainConfig& cfg, const GaussianSet& theta) {
  EvalRequest req;
  req.physics = true;
  req.gradients = false;
  const LossTerms t = evaluate(sc, cfg, theta, req);
  SweepRow row;
  row.neg_phys = -t.phys;
  const auto& rs = t.trajectory.rigid_states;
  double z = 0;
  for (const auto& r : rs) z += r.x.z();
  row.mean_z = rs.empty() ? 0.0 : z / static_cast<double>(rs.size());
  row.z_first = rs.empty() ? 0.0 : rs.front().x.z();
  row.z_last = rs.empty() ? 0.0 : rs.back().x.z();
  if (sc.objective.region) row.outside_fraction = mass_fraction_outside(t.final_fluid, sc.sim.grid, *sc.objective.region);
  return row;
}

std::vector<SweepRow> sweep(const TrainScenario& sc, const TrainConfig& cfg, const std::vector<double>& lambdas,
                            const std::optional<std::filesystem::path>& dir) {
  if (lambdas.empty()) throw InvalidParameter("sweep needs at least one lambda");
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    TrainConfig c = cfg;
    c.lambda_phys = lambdas[k];
    SweepRow row;
    try {
      TrainOutput o;
      if (dir) o.dir = *dir / ("lambda_" + std::to_string(k));
      const TrainResult r = train(sc, c, o);
      row = physics_metrics(sc, c, r.final);
      row.ssim = heldout_ssim(sc, r.final);
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
      row.ssim = row.neg_phys = std::numeric_limits<double>::quiet_NaN();
    }
    row.lambda = lambdas[k];
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "lambda,heldout_ssim,neg_L_phys,mean_z,z_0,z_T,outside_fraction,status\n" << std::setprecision(17);
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << r.lambda << ',' << r.ssim << ',' << r.neg_phys << ',' << r.mean_z << ',' << r.z_first << ',' << r.z_last
        << ',' << r.outside_fraction << ',' << status << '\n';
  }
}

}  // namespace pgs
