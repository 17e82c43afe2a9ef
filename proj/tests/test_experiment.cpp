#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dbsde/experiment/config.hpp"
#include "dbsde/experiment/csv.hpp"
#include "dbsde/experiment/run.hpp"

using namespace dbsde;
using namespace dbsde::experiment;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("dbsde_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

// A straddle config small enough to train in well under a second.
ExperimentConfig tiny(const std::string& runs_json, int batches = 6) {
  return parse_config_text(R"({"preset":"straddle_fixed","batch_size":16,"n_batches":)" + std::to_string(batches) +
                           R"(,"range_window":3,"runs":)" + runs_json +
                           R"(,"strategy_grid":{"time_indices":[0,50],"spots":[80,100,120],"rollback_paths":32},)"
                           R"("yinit_curve":{"spots":[90,110],"rollback_paths":32}})");
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(DBSDE_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, StraddleFixedPreset) {
  const auto c = load_preset("straddle_fixed");
  EXPECT_EQ(c.problem.model.sigma_ln, 0.3);
  EXPECT_EQ(c.problem.model.mu, 0.05);
  EXPECT_EQ(c.problem.rates.r_l, 0.03);
  EXPECT_EQ(c.problem.rates.r_b, 0.05);
  EXPECT_EQ(c.problem.grid.maturity, 1.0);
  EXPECT_EQ(c.problem.grid.n_steps, 100);
  EXPECT_EQ(std::get<market::FixedX0>(c.problem.x0).value, 100.0);
  EXPECT_EQ(c.problem.payoff.strikes(), std::vector<double>{100.0});
  EXPECT_EQ(c.n_batches, 20000);
  // forward_fixed once per position, three backward methods per backstep
  EXPECT_EQ(c.runs.size(), 14u);
}

TEST(Config, CallComboFixedPreset) {
  const auto c = load_preset("call_combo_fixed");
  EXPECT_EQ(c.problem.grid.n_steps, 50);
  EXPECT_EQ(c.problem.grid.maturity, 0.5);
  EXPECT_EQ(std::get<market::FixedX0>(c.problem.x0).value, 120.0);
  EXPECT_EQ(c.problem.rates.r_l, 0.04);
  EXPECT_EQ(c.problem.rates.r_b, 0.06);
  const auto& cc = std::get<market::CallCombination>(c.problem.payoff.shape);
  EXPECT_EQ(cc.strike_low, 120.0);
  EXPECT_EQ(cc.strike_high, 150.0);
  EXPECT_EQ(cc.weight_high, -2.0);
  EXPECT_EQ(c.runs.size(), 4u);
}

TEST(Config, RandomPresets) {
  const auto s = load_preset("straddle_random");
  EXPECT_EQ(s.batch_size, 1024);
  const auto& u = std::get<market::UniformX0>(s.problem.x0);
  EXPECT_EQ(u.lo, 50.0);
  EXPECT_EQ(u.hi, 150.0);
  ASSERT_TRUE(s.plot_window);
  EXPECT_EQ((*s.plot_window)[0], 80.0);
  EXPECT_EQ(s.yinit_curve.spots.size(), 21u);
  const auto c = load_preset("call_combo_random");
  EXPECT_EQ(std::get<market::UniformX0>(c.problem.x0).lo, 70.0);
  EXPECT_EQ(std::get<market::UniformX0>(c.problem.x0).hi, 170.0);
}

TEST(Config, OverridesMergeOntoPreset) {
  const auto c = parse_config_text(R"({"preset":"straddle_fixed","batch_size":1024,"rates":{"r_b":0.07}})");
  EXPECT_EQ(c.batch_size, 1024);
  EXPECT_EQ(c.problem.rates.r_b, 0.07);
  EXPECT_EQ(c.problem.rates.r_l, 0.03);
  const auto r = parse_config_text(R"({"preset":"straddle_fixed","runs":[{"method":"learned_y0"}]})");
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_EQ(r.runs[0].label(), "learned_y0:exact:long");
}

TEST(Config, RollingWindowMethod) {
  const auto c = parse_config_text(R"({"preset":"straddle_fixed","runs":[{"method":"batch_variance_rolling37"}]})");
  EXPECT_EQ(c.runs[0].variant.rolling_window, 37);
  EXPECT_EQ(c.runs[0].variant.name(), "batch_variance_rolling37");
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config_text(R"({"preset":"straddle_fixed","bogus":1})"), InvalidSpec);
  EXPECT_THROW(parse_config_text(R"({"preset":"no_such_preset"})"), InvalidSpec);
  EXPECT_THROW(parse_config_text(R"({"preset":"straddle_fixed","rates":{"r_b":0.01}})"), InvalidSpec);
  EXPECT_THROW(parse_config_text(R"({"preset":"straddle_fixed","runs":[{"method":"nope"}]})"), InvalidSpec);
  EXPECT_THROW(parse_config_text(R"({"preset":"straddle_fixed","runs":[{"method":"learned_y0","backstep":"x"}]})"),
               InvalidSpec);
  EXPECT_THROW(parse_config_text(R"({"preset":"straddle_fixed","batch_size":"big"})"), InvalidSpec);
  EXPECT_THROW(parse_config_text("{not json"), InvalidSpec);
  auto j = preset_json("straddle_fixed");
  j.erase("preset");
  j.erase("model");
  EXPECT_THROW(parse_config_json(j), InvalidSpec);
}

TEST(Config, ToJsonRoundTrips) {
  for (const auto& name : preset_names()) {
    const auto c = load_preset(name);
    auto j = to_json(c);
    j.erase("preset");
    EXPECT_EQ(to_json(parse_config_json(j)).dump(), [&] {
      auto k = to_json(c);
      k.erase("preset");
      return k.dump();
    }()) << name;
  }
}

TEST(Config, RunSeedsDependOnVariantAndPositionOnly) {
  const auto c = load_preset("straddle_fixed");
  RunSpec a, b;
  b.backstep = solver::BackstepMethod::Taylor;
  EXPECT_EQ(c.run_seed(a), c.run_seed(b));
  b.position = Position::Short;
  EXPECT_NE(c.run_seed(a), c.run_seed(b));
  RunSpec f;
  f.variant = solver::SolverVariant::forward_fixed();
  EXPECT_NE(c.run_seed(a), c.run_seed(f));
}

TEST(Csv, NumberFormatting) {
  EXPECT_EQ(format_number(1.5), "1.5");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(format_number(24.0204712345), "24.0204712");
  EXPECT_EQ(format_number(std::nan("")), "nan");
  CsvTable t({"a", "b"});
  t.row() << "x,y" << 2;
  EXPECT_EQ(t.str(), "a,b\n\"x,y\",2\n");
  t.row() << 1.0;
  EXPECT_THROW(t.str(), InvalidSpec);
}

TEST(Artifacts, ZeroBatchesGiveHeadersOnly) {
  auto c = tiny(R"([{"method":"learned_y0"}])", 0);
  c.pde.enabled = false;
  const auto dir = scratch_dir("zero");
  write_artifacts(run_experiment(c), dir);
  for (const auto& f : {"loss_curve.csv", "y0_history.csv", "strategy_grid.csv", "yinit_curve.csv"})
    EXPECT_EQ(read_csv(dir / f).size(), 1u) << f;
  EXPECT_EQ(slurp(dir / "loss_curve.csv"), "run,batch,loss\n");
  fs::remove_all(dir);
}

TEST(Artifacts, RepeatedRunsAreByteIdentical) {
  const auto c =
      tiny(R"([{"method":"learned_y0"},{"method":"batch_variance_rolling100","backstep":"taylor","position":"short"}])");
  const auto d1 = scratch_dir("rep1"), d2 = scratch_dir("rep2"), d3 = scratch_dir("rep3");
  write_artifacts(run_experiment(c), d1);
  write_artifacts(run_experiment(c), d2);
  // the job count changes scheduling only; run.json records it
  auto c3 = c;
  c3.jobs = 2;
  write_artifacts(run_experiment(c3), d3);
  for (const auto& f : artifact_files()) {
    if (f == "summary.csv") continue;
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    if (f != "run.json") EXPECT_EQ(slurp(d1 / f), slurp(d3 / f)) << f;
  }
  // wall_time is the only column allowed to differ
  for (const auto& d : {d2, d3}) {
    auto s1 = read_csv(d1 / "summary.csv"), s2 = read_csv(d / "summary.csv");
    ASSERT_EQ(s1.size(), s2.size());
    for (std::size_t i = 0; i < s1.size(); ++i)
      for (std::size_t k = 0; k + 1 < s1[i].size(); ++k) EXPECT_EQ(s1[i][k], s2[i][k]);
  }
  for (const auto& d : {d1, d2, d3}) fs::remove_all(d);
}

TEST(Artifacts, SummaryHasOneRowPerRunPlusOracle) {
  auto c = tiny(R"([{"method":"learned_y0"},{"method":"batch_variance_last"}])");
  const auto res = run_experiment(c);
  const auto dir = scratch_dir("summary");
  write_artifacts(res, dir);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 1u + 2u + 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"method", "backstep", "price", "range_min", "range_max", "wall_time"}));
  EXPECT_EQ(rows[1][0], "learned_y0:long");
  EXPECT_EQ(rows[2][0], "batch_variance_last:long");
  EXPECT_EQ(rows[3][0], "pde_upper");
  EXPECT_EQ(rows[4][0], "pde_lower");
  EXPECT_EQ(rows[3][1], "implicit");
  for (int i = 1; i <= 2; ++i) EXPECT_LE(std::stod(rows[i][3]), std::stod(rows[i][4]));
  // y0_history: batch column plus one per run
  const auto y0 = read_csv(dir / "y0_history.csv");
  EXPECT_EQ(y0[0].size(), 3u);
  EXPECT_EQ(y0.size(), 1u + 6u);
  const auto loss = read_csv(dir / "loss_curve.csv");
  EXPECT_EQ(loss.size(), 1u + 2u * 6u);
  const auto meta = json::parse(slurp(dir / "run.json"));
  EXPECT_TRUE(meta["complete"].get<bool>());
  EXPECT_EQ(meta["runs"].size(), 2u);
  fs::remove_all(dir);
}

TEST(Artifacts, StrategyGridColumnsAreConsistent) {
  const auto c = tiny(R"([{"method":"learned_y0"},{"method":"forward_fixed"}])");
  const auto dir = scratch_dir("grid");
  write_artifacts(run_experiment(c), dir);
  const auto rows = read_csv(dir / "strategy_grid.csv");
  ASSERT_EQ(rows.size(), 1u + 2u * 2u * 3u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double x = std::stod(rows[i][2]), delta = std::stod(rows[i][3]), pi = std::stod(rows[i][4]),
                 cash = std::stod(rows[i][5]);
    EXPECT_NEAR(delta * x, pi, 1e-6 * (1.0 + std::abs(pi)));
    const double y = cash + pi;
    EXPECT_EQ(rows[i][6], pi > y ? "1" : "0");
    // the fixed start 100 at t = 0 makes 80 and 120 extrapolations
    if (std::stod(rows[i][1]) == 0.0) EXPECT_EQ(rows[i][7], x == 100.0 ? "0" : "1");
  }
  // neither run has a Yinit network
  EXPECT_EQ(read_csv(dir / "yinit_curve.csv").size(), 1u);
  fs::remove_all(dir);
}

TEST(Artifacts, YinitCurveForRandomStarts) {
  const auto c = parse_config_text(
      R"({"preset":"straddle_random","batch_size":16,"n_batches":4,"range_window":2,)"
      R"("yinit_curve":{"spots":[60,100,140],"rollback_paths":32},"strategy_grid":{"time_indices":[0],"spots":[100]}})");
  const auto dir = scratch_dir("yinit");
  write_artifacts(run_experiment(c), dir);
  const auto rows = read_csv(dir / "yinit_curve.csv");
  // forward_random and yinit_network, long and short
  ASSERT_EQ(rows.size(), 1u + 4u * 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"run", "x0", "yinit", "rollback_mean"}));
  EXPECT_EQ(rows[1][0], "forward_random:exact:long");
  EXPECT_EQ(rows[4][0], "yinit_network:exact:long");
  EXPECT_EQ(read_csv(dir / "pde_curve.csv").size(), 1u + 3u);
  const auto meta = json::parse(slurp(dir / "run.json"));
  EXPECT_EQ(meta["plot_window"], json({80.0, 120.0}));
  EXPECT_EQ(meta["sampled_range"], json({50.0, 150.0}));
  fs::remove_all(dir);
}

TEST(Artifacts, ZeroStrategyHoldsEverythingInCash) {
  auto c = tiny(R"([{"method":"learned_y0"}])", 1);
  c.pde.enabled = false;
  auto res = run_experiment(c);
  auto& params = res.runs[0].result.state.params;
  std::fill(params.values().begin(), params.values().end(), 0.0);
  const auto t = strategy_grid_table(res).str();
  std::istringstream in(t);
  std::string line;
  std::getline(in, line);
  int n = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    EXPECT_EQ(cells[3], "0");
    EXPECT_EQ(cells[4], "0");
    // with no risky holdings the cash is the discounted payoff mean, never borrowed
    EXPECT_GT(std::stod(cells[5]), 0.0);
    EXPECT_EQ(cells[6], "0");
    ++n;
  }
  EXPECT_EQ(n, 6);
}

TEST(Artifacts, ShortRunsReportLowerPrices) {
  auto c = tiny(R"([{"method":"learned_y0"},{"method":"learned_y0","position":"short"}])", 40);
  const auto res = run_experiment(c);
  EXPECT_EQ(res.runs[0].orientation, 1.0);
  EXPECT_EQ(res.runs[1].orientation, -1.0);
  EXPECT_GT(res.runs[0].price(), 0.0);
  EXPECT_GT(res.runs[1].price(), 0.0);
  EXPECT_EQ(res.pde[0].label, "pde_upper");
  EXPECT_GT(res.pde[0].price, res.pde[1].price);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("presets"), 0);
  EXPECT_EQ(run_cli("run no_such_preset"), 2);
  EXPECT_EQ(run_cli(R"(run '{"preset":"straddle_fixed","rates":{"r_b":0.0}}')"), 2);
  EXPECT_EQ(run_cli("run --batches -3 straddle_fixed"), 2);
  EXPECT_EQ(run_cli("oracle straddle_fixed --nodes 101 --steps 20"), 0);
  const auto dir = scratch_dir("cli");
  EXPECT_EQ(run_cli("run straddle_fixed --batches 2 --batch-size 8 --out-dir " + dir.string() +
                    R"( --progress-every 0)"),
            0);
  for (const auto& f : artifact_files()) EXPECT_TRUE(fs::exists(dir / f)) << f;
  fs::remove_all(dir);
}
