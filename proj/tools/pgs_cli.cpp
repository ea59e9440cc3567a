#include "pgs/common.hpp"
#include "pgs/fluid.hpp"
#include "pgs/occupancy.hpp"
#include "pgs/optimize.hpp"
#include "pgs/rigid.hpp"
#include "pgs/scenario.hpp"
#include "pgs/scene_io.hpp"
#include "pgs/splat.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pgs;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kThreshold = 3 };

/// Thrown by gradcheck when the error bound is exceeded; artifacts are still written.
struct ThresholdFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot read " + p.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

/// Shared state of one command invocation.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  std::string out_dir;
  int threads = 0;
  std::vector<std::string> extras;

  ScenarioConfig cfg;
  json resolved;
  fs::path out;
  std::vector<fs::path> files;

  fs::path file(const std::string& name) {
    const fs::path p = out / name;
    files.push_back(p);
    return p;
  }
  void track(const std::vector<fs::path>& ps) { files.insert(files.end(), ps.begin(), ps.end()); }
};

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw UsageError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw UsageError("option --" + body + " needs a value");
    }
  }
  return out;
}

void resolve(Run& r) {
  json user = json::object();
  if (!r.config_path.empty()) {
    std::ifstream in(r.config_path);
    if (!in) throw UsageError("cannot open config " + r.config_path);
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config " + r.config_path + ": " + e.what());
    }
    // A RunManifest is accepted as a config: it carries the resolved config.
    if (user.is_object() && user.contains("config") && user.contains("tool")) user = user.at("config");
  }
  r.cfg = resolve_config(user, parse_overrides(r.extras));
  r.resolved = to_json(r.cfg);
  if (r.threads > 0) set_thread_count(r.threads);
  r.out = r.out_dir.empty() ? fs::path("runs") / (r.cfg.name + "_" + timestamp() + "_s" + std::to_string(r.cfg.train.seed))
                            : fs::path(r.out_dir);
  fs::create_directories(r.out);
}

void write_manifest(Run& r, const std::string& status, int code, const std::string& error) {
  if (r.out.empty()) return;
  json files = json::array();
  for (const auto& p : r.files) {
    if (!fs::exists(p)) continue;
    files.push_back({{"path", fs::relative(p, r.out).generic_string()},
                     {"bytes", fs::file_size(p)},
                     {"sha256", sha256_hex(p)}});
  }
  json m = {{"tool", "pgs"},
            {"version", PGS_VERSION},
            {"command", r.command},
            {"argv", r.argv},
            {"seed", r.cfg.train.seed},
            {"threads", thread_count()},
            {"status", status},
            {"exit_code", code},
            {"config", r.resolved},
            {"files", files}};
  if (!error.empty()) m["error"] = error;
  std::ofstream(r.out / "manifest.json") << m.dump(2) << "\n";
}

GaussianSet pick_set(const ScenarioBundle& b, const std::string& which) {
  if (which.empty() || which == "ground-truth") return b.ground_truth;
  if (which == "initial") return b.scenario.initial;
  return load_gaussians(which);
}

// -- commands ------------------------------------------------------------------

void cmd_generate(Run& r) {
  const ScenarioBundle b = build_scenario(r.cfg);
  r.track(write_bundle(b, r.out));
}

void cmd_render(Run& r, const std::string& which) {
  const ScenarioBundle b = build_scenario(r.cfg);
  const GaussianSet set = pick_set(b, which);
  const TrainScenario& sc = b.scenario;
  std::ofstream csv(r.file("render_metrics.csv"));
  csv << "view,split,ssim,l1\n" << std::setprecision(10);
  auto emit = [&](const std::vector<Camera>& cams, const std::vector<Image>& targets, const char* split) {
    for (std::size_t k = 0; k < cams.size(); ++k) {
      const RenderTarget rt = render(set, cams[k]);
      char name[64];
      std::snprintf(name, sizeof name, "render_%s_%03zu.png", split, k);
      write_png(rt.image, r.file(name));
      if (k < targets.size()) {
        const VisualLoss v = visual_loss(rt.image, targets[k], r.cfg.train.w_ssim, false);
        csv << k << "," << split << "," << v.ssim << "," << v.l1 << "\n";
      }
    }
  };
  emit(sc.cameras, sc.targets, "train");
  emit(sc.heldout_cameras, sc.heldout_targets, "heldout");
}

void cmd_mask(Run& r, const std::string& which, bool dense) {
  const ScenarioBundle b = build_scenario(r.cfg);
  const GaussianSet set = pick_set(b, which);
  const OccupancyGrid g = dense ? dense_mask(set, r.cfg.grid) : tiled_mask(set, r.cfg.grid, r.cfg.mask.tile, r.cfg.mask.kappa);
  dump_field(g.spec, g.chi, "chi", r.file("chi.raw"));
  r.files.push_back(r.out / "chi.raw.json");
  double lo = 1, hi = 0, sum = 0;
  for (double c : g.chi) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
    sum += c;
  }
  const json stats = {{"min", lo}, {"max", hi}, {"mean", sum / static_cast<double>(g.chi.size())},
                      {"dense", dense}, {"tile", g.tile}, {"kappa", dense ? 0.0 : r.cfg.mask.kappa}};
  std::ofstream(r.file("mask_stats.json")) << stats.dump(2) << "\n";
}

void cmd_simulate(Run& r, const std::string& which, int dump_every) {
  const ScenarioBundle b = build_scenario(r.cfg);
  const GaussianSet set = pick_set(b, which);
  SimSetup setup = make_sim_setup(r.cfg, set);
  const GridSpec& spec = setup.grid;
  const std::optional<Box> region = r.cfg.objective.region;

  std::ofstream steps(r.file("steps.csv"));
  std::ofstream diag(r.file("fluid_diagnostics.csv"));
  steps << std::setprecision(17) << "t,dye_mass,dye_mass_in_region,outside_fraction,body_z\n";
  diag << std::setprecision(17) << "t,max_divergence,dye_mass,kinetic_energy\n";
  if (dump_every > 0) {
    const OccupancyGrid chi0 = tiled_mask(set, spec, setup.mask.tile, setup.mask.kappa);
    dump_field(spec, chi0.chi, "chi", r.file("chi.raw"));
    r.files.push_back(r.out / "chi.raw.json");
  }

  const Tape tape = record(set, setup, [&](int t, const FluidState& f, const RigidState& s) {
    const double mass = dye_mass(f, spec);
    const double outside = region ? mass_fraction_outside(f, spec, *region) : 0.0;
    steps << t << "," << mass << "," << mass * (1.0 - outside) << "," << outside << "," << s.x.z() << "\n";
    const FluidDiagnostics d = diagnostics(f, setup.sim, spec);
    diag << t << "," << d.max_divergence << "," << d.dye_mass << "," << d.kinetic_energy << "\n";
    if (dump_every > 0 && t % dump_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "rho_%04d.raw", t);
      dump_field(spec, f.rho, "rho", r.file(name));
      r.files.push_back(r.out / (std::string(name) + ".json"));
      for (int c = 0; c < 3; ++c) {
        std::snprintf(name, sizeof name, "u%c_%04d.raw", "xyz"[c], t);
        dump_field(spec, f.u.c[static_cast<std::size_t>(c)], std::string("u") + "xyz"[c], r.file(name));
        r.files.push_back(r.out / (std::string(name) + ".json"));
      }
    }
  });

  // Row t carries the wrench of the step that produced state t (zero at t = 0).
  std::ofstream rigid(r.file("rigid_trajectory.csv"));
  rigid << std::setprecision(17)
        << "t,x,y,z,vx,vy,vz,qw,qx,qy,qz,Lx,Ly,Lz,fx,fy,fz,taux,tauy,tauz,cholesky_ok,min_eigenvalue\n";
  const Trajectory& traj = tape.trajectory();
  for (std::size_t t = 0; t < traj.rigid_states.size(); ++t) {
    const RigidState& s = traj.rigid_states[t];
    const BodyForces f = t > 0 ? traj.forces[t - 1] : BodyForces{};
    const IntegrateInfo in = t > 0 ? traj.integrate[t - 1] : IntegrateInfo{};
    rigid << t;
    for (double v : {s.x.x(), s.x.y(), s.x.z(), s.v.x(), s.v.y(), s.v.z(), s.q[0], s.q[1], s.q[2], s.q[3], s.L.x(),
                     s.L.y(), s.L.z(), f.f.x(), f.f.y(), f.f.z(), f.tau.x(), f.tau.y(), f.tau.z()})
      rigid << "," << v;
    rigid << "," << (in.cholesky_ok ? 1 : 0) << "," << in.min_eigenvalue << "\n";
  }
}

void cmd_optimize(Run& r, bool quiet) {
  const ScenarioBundle b = build_scenario(r.cfg);
  TrainOutput out;
  out.dir = r.out;
  if (!quiet)
    out.progress = [](const TrainRow& row) {
      if (row.iter % 25 == 0)
        std::fprintf(stderr, "iter %4d phase %d  vis %.5f  phys %.5f  ssim %.4f\n", row.iter, row.phase, row.l_vis,
                     row.l_phys, row.ssim);
    };
  const std::size_t before = r.files.size();
  try {
    const TrainResult res = train(b.scenario, r.cfg.train, out);
    const SweepRow m = physics_metrics(b.scenario, r.cfg.train, res.final);
    const json metrics = {{"heldout_ssim", heldout_ssim(b.scenario, res.final)},
                          {"neg_phys", m.neg_phys},
                          {"mean_z", m.mean_z},
                          {"z_first", m.z_first},
                          {"z_last", m.z_last},
                          {"outside_fraction", m.outside_fraction}};
    std::ofstream(r.file("metrics.json")) << metrics.dump(2) << "\n";
  } catch (...) {
    for (const auto& e : fs::directory_iterator(r.out))
      if (e.path().filename() != "manifest.json") r.files.push_back(e.path());
    throw;
  }
  r.files.resize(before);
  for (const auto& e : fs::directory_iterator(r.out))
    if (e.path().filename() != "manifest.json") r.files.push_back(e.path());
}

void cmd_gradcheck(Run& r, const std::string& loss_kind, double eps, int per_group, double threshold) {
  const ScenarioBundle b = build_scenario(r.cfg);
  const TrainScenario& sc = b.scenario;
  const TrainConfig& tc = r.cfg.train;
  const bool vis = loss_kind != "phys";
  const bool phys = loss_kind != "vis";
  if (loss_kind != "phys" && loss_kind != "vis" && loss_kind != "joint")
    throw UsageError("--loss must be phys, vis or joint");
  const double lam = loss_kind == "joint" ? tc.lambda_phys : 1.0;
  std::vector<int> views;
  for (int k = 0; k < static_cast<int>(sc.cameras.size()); ++k) views.push_back(k);
  EvalRequest req;
  req.physics = phys;
  if (vis) req.views = views;
  auto value = [&](const LossTerms& t) { return (vis ? t.vis : 0.0) + (phys ? lam * t.phys : 0.0); };
  const LossTerms t0 = evaluate(sc, tc, sc.initial, req);
  GradBuffer analytic = GradBuffer::zeros_like(sc.initial);
  if (vis) analytic.add(t0.g_vis);
  if (phys) analytic.add(t0.g_phys, lam);
  EvalRequest probe = req;
  probe.gradients = false;
  GradCheckOptions opt;
  opt.eps = eps;
  opt.per_group = per_group;
  opt.seed = tc.seed;
  const GradReport rep = gradcheck([&](const GaussianSet& th) { return value(evaluate(sc, tc, th, probe)); },
                                   sc.initial, analytic, opt);
  rep.write_csv(r.file("gradcheck.csv"));
  const auto gmax = rep.group_max_rel();
  json groups = json::object();
  for (std::size_t g = 0; g < kAllGroups.size(); ++g)
    groups[std::string(group_name(kAllGroups[g]))] = {{"max_rel", gmax[g]}, {"norm", rep.group_norm[g]}};
  const json summary = {{"loss", loss_kind}, {"eps", eps},           {"max_rel", rep.max_rel},
                        {"median_rel", rep.median_rel}, {"flagged", rep.flagged}, {"threshold", threshold},
                        {"groups", groups}};
  std::ofstream(r.file("gradcheck_summary.json")) << summary.dump(2) << "\n";
  std::printf("gradcheck: max rel %.3e  median rel %.3e  flagged %zu  (threshold %.1e)\n", rep.max_rel,
              rep.median_rel, rep.flagged, threshold);
  if (!(rep.max_rel <= threshold)) throw ThresholdFailure("max relative error above threshold");
}

std::vector<double> parse_lambdas(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--lambdas: '" + item + "' is not a non-negative number");
    }
  }
  if (out.empty()) throw UsageError("--lambdas: empty list");
  return out;
}

void cmd_sweep(Run& r, const std::string& lambdas) {
  const std::vector<double> ls = parse_lambdas(lambdas);
  const ScenarioBundle b = build_scenario(r.cfg);
  const std::vector<SweepRow> rows = sweep(b.scenario, r.cfg.train, ls, r.out);
  write_sweep_csv(rows, r.file("sweep.csv"));
  for (const auto& e : fs::recursive_directory_iterator(r.out))
    if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().filename() != "sweep.csv")
      r.files.push_back(e.path());
  bool any_failed = false;
  for (const auto& row : rows) any_failed = any_failed || row.status != "ok";
  if (any_failed) throw SolverFailure("one or more sweep points failed (see sweep.csv)", 0.0, 0);
}

int classify(const std::exception_ptr& ep, std::string& msg) {
  try {
    std::rethrow_exception(ep);
  } catch (const UsageError& e) {
    msg = e.what();
    return kUsage;
  } catch (const ParseError& e) {
    msg = e.what();
    return kUsage;
  } catch (const ThresholdFailure& e) {
    msg = e.what();
    return kThreshold;
  } catch (const std::exception& e) {
    msg = e.what();
    return kNumerical;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-guided Gaussian scene optimization"};
  app.set_version_flag("--version", PGS_VERSION);
  app.require_subcommand(1);

  Run run;
  for (int i = 0; i < argc; ++i) run.argv.emplace_back(argv[i]);
  std::string which, loss_kind = "phys", lambdas = "0,0.001,0.01,0.1";
  bool dense = false, quiet = false;
  int dump_every = 0, per_group = 0;
  double eps = 1e-4, threshold = 1e-2;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", run.config_path, "Scenario config JSON (or a RunManifest)");
    sub->add_option("-o,--out", run.out_dir, "Output directory (default runs/<name>_<time>_s<seed>)");
    sub->add_option("--threads", run.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->allow_extras();
    sub->footer("Any config field can be overridden dot-path style, e.g. --train.lambda_phys=0.01");
    return sub;
  };

  auto* gen = add_common(app.add_subcommand("generate", "Write the scenario bundle (scene, cameras, views)"));
  auto* ren = add_common(app.add_subcommand("render", "Render a Gaussian set from every camera"));
  ren->add_option("-g,--gaussians", which, "PLY path, 'ground-truth' or 'initial'");
  auto* msk = add_common(app.add_subcommand("mask", "Rasterize the soft occupancy mask"));
  msk->add_option("-g,--gaussians", which, "PLY path, 'ground-truth' or 'initial'");
  msk->add_flag("--dense", dense, "Evaluate every Gaussian at every cell");
  auto* sim = add_common(app.add_subcommand("simulate", "Run the coupled simulation and write per-step CSVs"));
  sim->add_option("-g,--gaussians", which, "PLY path, 'ground-truth' or 'initial'");
  sim->add_option("--dump-every", dump_every, "Write field dumps every N steps (0: none)")->check(CLI::NonNegativeNumber);
  auto* opt = add_common(app.add_subcommand("optimize", "Staged visual then joint optimization"));
  opt->add_flag("-q,--quiet", quiet, "No progress output");
  auto* gc = add_common(app.add_subcommand("gradcheck", "Compare adjoint gradients against central differences"));
  gc->add_option("--loss", loss_kind, "phys | vis | joint")->check(CLI::IsMember({"phys", "vis", "joint"}));
  gc->add_option("--eps", eps, "Finite-difference step")->check(CLI::PositiveNumber);
  gc->add_option("--per-group", per_group, "Entries probed per group (0: all)")->check(CLI::NonNegativeNumber);
  gc->add_option("--threshold", threshold, "Max relative error for exit 0");
  auto* swp = add_common(app.add_subcommand("sweep", "Train once per physics weight"));
  swp->add_option("--lambdas", lambdas, "Comma-separated physics weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  run.command = sub->get_name();
  run.extras = sub->remaining();

  int code = kOk;
  std::string msg;
  try {
    resolve(run);
  } catch (...) {
    code = classify(std::current_exception(), msg);
    std::cerr << "error: " << msg << "\n";
    return code == kNumerical ? kUsage : code;
  }

  try {
    if (sub == gen) cmd_generate(run);
    else if (sub == ren) cmd_render(run, which);
    else if (sub == msk) cmd_mask(run, which, dense);
    else if (sub == sim) cmd_simulate(run, which, dump_every);
    else if (sub == opt) cmd_optimize(run, quiet);
    else if (sub == gc) cmd_gradcheck(run, loss_kind, eps, per_group, threshold);
    else if (sub == swp) cmd_sweep(run, lambdas);
  } catch (...) {
    code = classify(std::current_exception(), msg);
    std::cerr << "error: " << msg << "\n";
  }
  try {
    write_manifest(run, code == kOk ? "ok" : "failed", code, msg);
  } catch (const std::exception& e) {
    std::cerr << "error: writing manifest: " << e.what() << "\n";
    if (code == kOk) code = kNumerical;
  }
  if (code == kOk) std::cout << run.out.string() << "\n";
  return code;
}
