#include "doctest.h"
#include "test_util.hpp"

#include "pgs/common.hpp"
#include "pgs/occupancy.hpp"
#include "pgs/scenario.hpp"
#include "pgs/scene_io.hpp"

#include "json.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

using namespace pgs;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
  const std::string cmd = std::string(PGS_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

fs::path write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

/// Rows of a numeric CSV keyed by header name.
std::vector<std::map<std::string, double>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line, cell;
  std::getline(in, line);
  std::vector<std::string> cols;
  std::stringstream hs(line);
  while (std::getline(hs, cell, ',')) cols.push_back(cell);
  std::vector<std::map<std::string, double>> rows;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::map<std::string, double> row;
    for (const auto& c : cols) {
      std::getline(ls, cell, ',');
      row[c] = std::strtod(cell.c_str(), nullptr);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Cells reachable from the grid boundary through cells with chi <= wall.
std::vector<bool> flood_from_boundary(const ScalarField& chi, const GridSpec& g, double wall) {
  std::vector<bool> seen(chi.size(), false);
  std::deque<std::array<int, 3>> q;
  const auto [nx, ny, nz] = g.dims;
  auto push = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return;
    const std::size_t idx = g.index(i, j, k);
    if (seen[idx] || chi[idx] > wall) return;
    seen[idx] = true;
    q.push_back({i, j, k});
  };
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1) push(i, j, k);
  while (!q.empty()) {
    const auto [i, j, k] = q.front();
    q.pop_front();
    push(i + 1, j, k);
    push(i - 1, j, k);
    push(i, j + 1, k);
    push(i, j - 1, k);
    push(i, j, k + 1);
    push(i, j, k - 1);
  }
  return seen;
}

}  // namespace

TEST_CASE("the vessel cavity is sealed") {
  const ScenarioConfig c = default_config("vessel");
  const GaussianSet gt = vessel_gaussians(c);
  const ScalarField chi = tiled_mask(gt, c.grid, c.mask).chi;
  const std::vector<bool> outside = flood_from_boundary(chi, c.grid, 0.9);
  std::size_t enclosed = 0;
  for (std::size_t i = 0; i < chi.size(); ++i)
    if (chi[i] < 0.1 && !outside[i]) ++enclosed;
  MESSAGE("enclosed empty cells: " << enclosed);
  CHECK(enclosed > 0);
  REQUIRE(c.dye);
  CHECK_FALSE(outside[c.grid.index(11, 11, 14)]);
}

TEST_CASE("the wing mask is mirror symmetric") {
  const ScenarioConfig c = default_config("wing");
  const ScalarField chi = tiled_mask(wing_gaussians(c), c.grid, c.mask).chi;
  const auto [nx, ny, nz] = c.grid.dims;
  double worst = 0, peak = 0;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        worst = std::max(worst, std::abs(chi[c.grid.index(i, j, k)] - chi[c.grid.index(i, ny - 1 - j, k)]));
        peak = std::max(peak, chi[c.grid.index(i, j, k)]);
      }
  CHECK(worst <= 1e-9);
  CHECK(peak > 0.5);
}

TEST_CASE("config documents and dot-path overrides") {
  for (const char* gen : {"vessel", "wing", "toy"}) {
    const ScenarioConfig c = default_config(gen);
    CHECK(to_json(from_json(to_json(c))) == to_json(c));
  }
  CHECK_THROWS_AS(default_config("teapot"), UsageError);

  const ScenarioConfig c = resolve_config(json{{"generator", "wing"}},
                                          {{"train.lambda_phys", "0.25"}, {"grid.dims", "[8,4,4]"}, {"sim.dye_buoyancy", "false"}});
  CHECK(c.train.lambda_phys == 0.25);
  CHECK(c.grid.dims == std::array<int, 3>{8, 4, 4});
  CHECK_FALSE(c.sim.dye_buoyancy);
  CHECK(to_json(c)["train"]["lambda_phys"] == 0.25);

  json doc = to_json(default_config("toy"));
  const auto paths = config_paths(doc);
  CHECK(std::find(paths.begin(), paths.end(), "train.lambda_phys") != paths.end());
  CHECK_THROWS_AS(apply_override(doc, "train.lamda_phys", "1"), UsageError);
  CHECK_THROWS_AS(apply_override(doc, "train.iters_vis", "many"), UsageError);
  CHECK_THROWS_AS(resolve_config(json{{"generator", "toy"}, {"bogus", 1}}), UsageError);
  CHECK_THROWS_AS(resolve_config(json{{"generator", "toy"}}, {{"generator", "wing"}}), UsageError);
}

TEST_CASE("the same seed gives the same bundle") {
  const auto dir = pgs::testing::scratch_dir("cli_bundle");
  const fs::path cfg = write_json(dir / "toy.json", {{"generator", "toy"}});
  const std::string base = "generate -c " + cfg.string() + " --train.seed=3 -o ";
  REQUIRE(run_cli(base + (dir / "a").string(), dir).code == 0);
  REQUIRE(run_cli(base + (dir / "b").string(), dir).code == 0);
  REQUIRE(run_cli("generate -c " + cfg.string() + " --train.seed=4 -o " + (dir / "c").string(), dir).code == 0);
  const json a = read_json(dir / "a" / "manifest.json"), b = read_json(dir / "b" / "manifest.json"),
             c = read_json(dir / "c" / "manifest.json");
  CHECK(a["status"] == "ok");
  CHECK(a["seed"] == 3);
  REQUIRE(a["files"].size() > 3);
  CHECK(a["files"] == b["files"]);
  CHECK(a["files"] != c["files"]);
  for (const auto& f : a["files"]) CHECK(fs::exists(dir / "a" / f["path"].get<std::string>()));

  // A manifest is itself a config that reproduces the run.
  REQUIRE(run_cli("generate -c " + (dir / "a" / "manifest.json").string() + " -o " + (dir / "d").string(), dir).code == 0);
  CHECK(read_json(dir / "d" / "manifest.json")["files"] == a["files"]);
}

TEST_CASE("overrides are recorded in the manifest") {
  const auto dir = pgs::testing::scratch_dir("cli_override");
  const fs::path cfg = write_json(dir / "toy.json", {{"generator", "toy"}});
  const Result r = run_cli("mask -c " + cfg.string() + " --train.lambda_phys=0.01 --mask.tile 2 -o " + (dir / "m").string(), dir);
  REQUIRE(r.code == 0);
  const json m = read_json(dir / "m" / "manifest.json");
  CHECK(m["command"] == "mask");
  CHECK(m["config"]["train"]["lambda_phys"] == 0.01);
  CHECK(m["config"]["mask"]["tile"] == 2);
  const json stats = read_json(dir / "m" / "mask_stats.json");
  CHECK(stats["max"].get<double>() <= 1.0);
  CHECK(stats["min"].get<double>() >= 0.0);
  const GridSpec g = from_json(m["config"]).grid;
  CHECK(fs::file_size(dir / "m" / "chi.raw") == g.cell_count() * sizeof(float));
}

TEST_CASE("usage errors exit with code 1") {
  const auto dir = pgs::testing::scratch_dir("cli_usage");
  const fs::path cfg = write_json(dir / "toy.json", {{"generator", "toy"}});
  Result r = run_cli("mask -c " + cfg.string() + " --train.lamda_phys=0.01 -o " + (dir / "x").string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("train.lambda_phys") != std::string::npos);
  CHECK(run_cli("frobnicate", dir).code == 1);
  CHECK(run_cli("", dir).code == 1);
  CHECK(run_cli("mask -c " + (dir / "missing.json").string(), dir).code == 1);
  CHECK(run_cli("gradcheck -c " + cfg.string() + " --loss banana", dir).code == 1);
  CHECK(run_cli("--version", dir).code == 0);
}

TEST_CASE("a quiescent simulation with an empty body keeps the dye") {
  const auto dir = pgs::testing::scratch_dir("cli_sim");
  GaussianSet empty;
  empty.resize(0, 1);
  save_gaussians(empty, dir / "empty.ply");
  const fs::path cfg = write_json(dir / "vessel.json", {{"generator", "vessel"}});
  const Result r = run_cli("simulate -c " + cfg.string() + " -g " + (dir / "empty.ply").string() +
                               " --train.horizon=10 --sim.gravity=[0,0,0] --dump-every 5 -o " + (dir / "s").string(),
                           dir);
  REQUIRE(r.code == 0);
  const auto steps = read_csv(dir / "s" / "steps.csv");
  REQUIRE(steps.size() == 11);
  const double m0 = steps.front().at("dye_mass");
  CHECK(m0 > 0.0);
  for (const auto& row : steps) CHECK(std::abs(row.at("dye_mass") - m0) <= 1e-9 * m0);
  const ScenarioConfig c = resolve_config(json{{"generator", "vessel"}});
  for (const auto& row : read_csv(dir / "s" / "fluid_diagnostics.csv"))
    CHECK(row.at("max_divergence") <= 10 * c.sim.cg_tol);
  CHECK(read_csv(dir / "s" / "rigid_trajectory.csv").size() == 11);
  CHECK(fs::exists(dir / "s" / "rho_0005.raw"));
  CHECK(fs::exists(dir / "s" / "rho_0005.raw.json"));
  const json m = read_json(dir / "s" / "manifest.json");
  for (const auto& f : m["files"]) CHECK(fs::exists(dir / "s" / f["path"].get<std::string>()));
}

TEST_CASE("gradcheck on the lift toy passes its threshold") {
  const auto dir = pgs::testing::scratch_dir("cli_gradcheck");
  const fs::path cfg = write_json(dir / "toy.json", {{"generator", "toy"}});
  const Result r = run_cli("gradcheck -c " + cfg.string() + " --threshold 1e-2 -o " + (dir / "g").string(), dir);
  CHECK(r.code == 0);
  const json s = read_json(dir / "g" / "gradcheck_summary.json");
  CHECK(s["max_rel"].get<double>() <= 1e-2);
  CHECK(fs::exists(dir / "g" / "gradcheck.csv"));

  // An impossible threshold is reported with its own exit code.
  const Result strict = run_cli("gradcheck -c " + cfg.string() + " --threshold 0 --per-group 1 -o " + (dir / "h").string(), dir);
  CHECK(strict.code == 3);
  CHECK(read_json(dir / "h" / "manifest.json")["status"] == "failed");
}

TEST_CASE("numerical failures exit with code 2 and mark the manifest") {
  const auto dir = pgs::testing::scratch_dir("cli_numerical");
  const fs::path cfg = write_json(dir / "toy.json", {{"generator", "toy"}});
  const Result r = run_cli("simulate -c " + cfg.string() + " --sim.cg_max_iters=1 -o " + (dir / "s").string(), dir);
  CHECK(r.code == 2);
  const json m = read_json(dir / "s" / "manifest.json");
  CHECK(m["status"] == "failed");
  CHECK(m["exit_code"] == 2);
  CHECK(m.contains("error"));
}

TEST_CASE("sweep writes one row per physics weight") {
  const auto dir = pgs::testing::scratch_dir("cli_sweep");
  const fs::path cfg = write_json(dir / "toy.json", {{"generator", "toy"}});
  const Result r = run_cli("sweep -c " + cfg.string() + " --lambdas 0,0.001,0.01,0.1 --train.iters_vis=4 --train.iters_joint=4 -o " +
                               (dir / "w").string(),
                           dir);
  REQUIRE(r.code == 0);
  const auto rows = read_csv(dir / "w" / "sweep.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[2].at("lambda") == 0.01);
  for (const auto& row : rows) CHECK(row.at("heldout_ssim") > 0.5);
}
