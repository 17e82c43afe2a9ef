#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dbsde/experiment/config.hpp"
#include "dbsde/experiment/csv.hpp"
#include "dbsde/pde/hjb.hpp"
#include "dbsde/solver/train.hpp"

namespace dbsde::experiment {

using nn::Matrix;

/// Trained run. Prices are oriented as prices: a short run solves for -g,
/// so its Y values are negated to give the lower price.
struct RunOutcome {
  RunSpec spec;
  solver::SolverConfig solver;
  solver::TrainResult result;
  double orientation = 1.0;

  double price() const { return orientation * result.report.y0_final; }
  bool diverged() const { return result.report.diverged; }
};

struct PdeReference {
  std::string label;  ///< pde_upper or pde_lower
  double x0 = 0.0;
  double price = 0.0;
  double wall_time = 0.0;
  pde::ValueSurface surface;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunOutcome> runs;
  std::vector<PdeReference> pde;

  bool any_diverged() const {
    for (const auto& r : runs)
      if (r.diverged()) return true;
    return false;
  }
};

using RunProgressFn = std::function<void(const std::string& label, int batch, const solver::TrainReport&)>;

inline RunOutcome train_run(const ExperimentConfig& config, const RunSpec& run, const RunProgressFn& progress = {}) {
  RunOutcome out{run, config.solver_config(run), {}, run.position == Position::Long ? 1.0 : -1.0};
  solver::ProgressFn cb;
  if (progress) cb = [&](int b, const solver::TrainReport& r) { progress(run.label(), b, r); };
  out.result = solver::train(out.solver, config.run_problem(run), cb);
  return out;
}

/// Upper and lower PDE prices at the X0 centre; only for one-asset problems.
inline std::vector<PdeReference> pde_references(const ExperimentConfig& config) {
  std::vector<PdeReference> refs;
  const auto& p = config.problem;
  if (!config.pde.enabled || p.model.dim != 1) return refs;
  const double x0 = market::x0_center(p.x0);
  double top = x0;
  if (const auto* u = std::get_if<market::UniformX0>(&p.x0)) top = u->hi;
  for (auto dir : {pde::PriceDirection::Upper, pde::PriceDirection::Lower}) {
    const auto start = std::chrono::steady_clock::now();
    pde::HjbProblem h{p.model.sigma_ln, p.rates.r_l, p.rates.r_b, p.payoff, p.grid.maturity - p.grid.t0, dir};
    const auto grid = pde::default_grid(h, top, config.pde.nodes, config.pde.time_steps, {x0});
    PdeReference r;
    r.label = dir == pde::PriceDirection::Upper ? "pde_upper" : "pde_lower";
    r.x0 = x0;
    r.surface = pde::solve_hjb_1d(h, grid);
    r.price = pde::sample_value(r.surface, x0);
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    refs.push_back(std::move(r));
  }
  return refs;
}

/// Trains every run of the config, `config.jobs` at a time. Each run owns
/// its seed and state, so the result does not depend on the job count.
inline ExperimentResult run_experiment(const ExperimentConfig& config, const RunProgressFn& progress = {}) {
  config.validate();
  ExperimentResult res;
  res.config = config;
  res.runs.resize(config.runs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < config.runs.size();) {
      try {
        res.runs[i] = train_run(config, config.runs[i], progress);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int jobs = std::min<int>(config.jobs, static_cast<int>(config.runs.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < jobs; ++k) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  res.pde = pde_references(config);
  return res;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace detail {

inline constexpr std::uint64_t kGridSeedDomain = 0x47524944;

// Log-spot band holding the simulated marginal at time t to about 4 sd.
inline bool outside_support(const solver::FbsdeProblem& p, double t, double x) {
  const double s = p.model.sigma_ln;
  const double drift = (p.model.mu - 0.5 * s * s) * t;
  const double band = 4.0 * s * std::sqrt(t);
  double lo = 0.0, hi = 0.0;
  if (const auto* f = std::get_if<market::FixedX0>(&p.x0)) {
    lo = hi = f->value;
  } else {
    lo = std::get<market::UniformX0>(p.x0).lo;
    hi = std::get<market::UniformX0>(p.x0).hi;
  }
  lo *= std::exp(drift - band);
  hi *= std::exp(drift + band);
  const double tol = 1e-12 * hi;
  return x < lo - tol || x > hi + tol;
}

}  // namespace detail

inline CsvTable loss_curve_table(const ExperimentResult& res) {
  CsvTable t({"run", "batch", "loss"});
  for (const auto& r : res.runs) {
    const auto& h = r.result.report.loss_history;
    for (std::size_t b = 0; b < h.size(); ++b) t.row() << r.spec.label() << static_cast<int>(b) << h[b];
  }
  return t;
}

/// Wide layout: batch, then one price column per run.
inline CsvTable y0_history_table(const ExperimentResult& res) {
  std::vector<std::string> header{"batch"};
  std::size_t rows = 0;
  for (const auto& r : res.runs) {
    header.push_back(r.spec.label());
    rows = std::max(rows, r.result.report.y0_history.size());
  }
  CsvTable t(header);
  for (std::size_t b = 0; b < rows; ++b) {
    auto row = t.row();
    row << static_cast<int>(b);
    for (const auto& r : res.runs) {
      const auto& h = r.result.report.y0_history;
      row << (b < h.size() ? r.orientation * h[b] : std::nan(""));
    }
  }
  return t;
}

/// pi, delta and cash of each trained strategy on the configured (t, x)
/// grid. Y comes from a value network at that time when the run has one,
/// otherwise from a roll-back mean under the frozen strategy. Values are
/// those of the solved problem (for a short run, the portfolio hedging -g).
inline CsvTable strategy_grid_table(const ExperimentResult& res) {
  CsvTable t({"run", "t", "x", "delta", "pi_value", "cash", "borrow_flag", "extrapolation_flag"});
  const auto& cfg = res.config;
  for (const auto& r : res.runs) {
    if (r.result.report.loss_history.empty()) continue;
    const auto& state = r.result.state;
    const auto problem = cfg.run_problem(r.spec);
    const int d = state.dim;
    for (int step : cfg.strategy_grid.time_indices) {
      const double time = problem.grid.time(step);
      for (std::size_t k = 0; k < cfg.strategy_grid.spots.size(); ++k) {
        const double x = cfg.strategy_grid.spots[k];
        const Matrix xs = Matrix::Constant(d, 1, x);
        const double pi = state.pi_values(step, xs).sum();
        double y = 0.0;
        if (step == 0 && state.has_value_network(0))
          y = state.value_network_values(0, xs)(0, 0);
        else if (step > 0 && state.has_value_network(step))
          y = state.value_network_values(step, xs)(0, 0);
        else
          y = solver::rollback_mean(state, problem, r.spec.backstep, cfg.strategy_grid.rollback_paths,
                                    CounterRng::stream(r.solver.seed, detail::kGridSeedDomain, step), x, step)
                  .mean;
        t.row() << r.spec.label() << time << x << pi / x << pi << y - pi << static_cast<int>(pi > y)
                << static_cast<int>(detail::outside_support(problem, time, x));
      }
    }
  }
  return t;
}

/// Yinit(x0) against the roll-back mean from x0, for runs with a Yinit network.
inline CsvTable yinit_curve_table(const ExperimentResult& res) {
  CsvTable t({"run", "x0", "yinit", "rollback_mean"});
  const auto& cfg = res.config;
  for (const auto& r : res.runs) {
    if (!r.result.state.has_value_network(0) || r.result.report.loss_history.empty()) continue;
    const auto problem = cfg.run_problem(r.spec);
    for (double x : cfg.yinit_curve.spots) {
      const double yinit = solver::yinit_at(r.result.state, x);
      const double mc = solver::rollback_mean(r.result.state, problem, r.spec.backstep, cfg.yinit_curve.rollback_paths,
                                              CounterRng::stream(r.solver.seed, detail::kGridSeedDomain, 1u << 20), x)
                            .mean;
      t.row() << r.spec.label() << x << r.orientation * yinit << r.orientation * mc;
    }
  }
  return t;
}

/// One row per run, then the PDE references (backstep "implicit").
inline CsvTable summary_table(const ExperimentResult& res) {
  CsvTable t({"method", "backstep", "price", "range_min", "range_max", "wall_time"});
  for (const auto& r : res.runs) {
    const auto& rep = r.result.report;
    double lo = r.orientation * rep.range_min, hi = r.orientation * rep.range_max;
    if (lo > hi) std::swap(lo, hi);
    t.row() << r.spec.variant.name() + ":" + to_string(r.spec.position) << solver::to_string(r.spec.backstep)
            << r.price() << lo << hi << rep.wall_time;
  }
  for (const auto& p : res.pde) t.row() << p.label << "implicit" << p.price << p.price << p.price << p.wall_time;
  return t;
}

/// PDE values at t = 0 on the yinit_curve and strategy spots inside the grid.
inline CsvTable pde_curve_table(const ExperimentResult& res) {
  CsvTable t({"x0", "upper", "lower"});
  if (res.pde.size() != 2) return t;
  std::vector<double> xs = res.config.yinit_curve.spots;
  if (xs.empty()) xs = res.config.strategy_grid.spots;
  for (double x : xs)
    t.row() << x << pde::sample_value(res.pde[0].surface, x) << pde::sample_value(res.pde[1].surface, x);
  return t;
}

inline json metadata_json(const ExperimentResult& res) {
  json m;
  m["config"] = to_json(res.config);
  const auto& cfg = res.config;
  if (cfg.plot_window)
    m["plot_window"] = {(*cfg.plot_window)[0], (*cfg.plot_window)[1]};
  else
    m["plot_window"] = nullptr;
  if (const auto* u = std::get_if<market::UniformX0>(&cfg.problem.x0))
    m["sampled_range"] = {u->lo, u->hi};
  m["runs"] = json::array();
  for (const auto& r : res.runs)
    m["runs"].push_back({{"label", r.spec.label()},
                         {"seed", r.solver.seed},
                         {"batches_completed", r.result.report.loss_history.size()},
                         {"diverged", r.diverged()},
                         {"diagnostic", r.result.report.diagnostic}});
  m["pde"] = json::array();
  for (const auto& p : res.pde) m["pde"].push_back({{"label", p.label}, {"x0", p.x0}, {"price", p.price}});
  m["complete"] = !res.any_diverged();
  return m;
}

inline const std::vector<std::string>& artifact_files() {
  static const std::vector<std::string> files{"loss_curve.csv",   "y0_history.csv", "strategy_grid.csv",
                                              "yinit_curve.csv",  "summary.csv",    "pde_curve.csv",
                                              "run.json"};
  return files;
}

/// Writes every artifact into `dir` (created if needed).
inline void write_artifacts(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  loss_curve_table(res).write(dir / "loss_curve.csv");
  y0_history_table(res).write(dir / "y0_history.csv");
  strategy_grid_table(res).write(dir / "strategy_grid.csv");
  yinit_curve_table(res).write(dir / "yinit_curve.csv");
  summary_table(res).write(dir / "summary.csv");
  pde_curve_table(res).write(dir / "pde_curve.csv");
  std::ofstream meta(dir / "run.json", std::ios::binary | std::ios::trunc);
  if (!meta) throw std::runtime_error("cannot write run.json");
  meta << metadata_json(res).dump(2) << '\n';
}

}  // namespace dbsde::experiment
