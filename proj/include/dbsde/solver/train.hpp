#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/market/paths.hpp"
#include "dbsde/nn/adam.hpp"
#include "dbsde/nn/tape.hpp"
#include "dbsde/solver/config.hpp"
#include "dbsde/solver/loss.hpp"
#include "dbsde/solver/rollout.hpp"
#include "dbsde/solver/state.hpp"

namespace dbsde::solver {

struct TrainReport {
  std::vector<double> loss_history;
  std::vector<double> y0_history;   ///< price estimate after each batch
  std::vector<double> batch_means;  ///< mean of the batch's Y0 values
  double y0_final = std::numeric_limits<double>::quiet_NaN();
  double range_min = std::numeric_limits<double>::quiet_NaN();
  double range_max = std::numeric_limits<double>::quiet_NaN();
  int range_window = 0;
  double wall_time = 0.0;
  bool diverged = false;
  std::string diagnostic;
};

struct TrainResult {
  SolverState state;
  TrainReport report;
  nn::AdamState optimizer;
};

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double std_dev = 0.0;
  int n_paths = 0;
};

namespace detail {
inline constexpr std::uint64_t kPilotBatch = 0xFFFFFFFF00000001ULL;
inline constexpr std::uint64_t kEvalBatch = 0xFFFFFFFF80000000ULL;

inline McEstimate summarize(const std::vector<double>& v) {
  McEstimate e;
  e.n_paths = static_cast<int>(v.size());
  if (v.empty()) return e;
  double s = 0.0;
  for (double x : v) s += x;
  e.mean = s / v.size();
  double q = 0.0;
  for (double x : v) q += (x - e.mean) * (x - e.mean);
  e.std_dev = v.size() > 1 ? std::sqrt(q / (v.size() - 1)) : 0.0;
  e.std_error = e.std_dev / std::sqrt(static_cast<double>(v.size()));
  return e;
}

inline double row_mean(const Matrix& m) { return m.mean(); }
}  // namespace detail

inline double reference_x0(const SolverConfig& config, const FbsdeProblem& problem) {
  return config.reference_x0.value_or(market::x0_center(problem.x0));
}

/// Yinit(x0) for a state with a Yinit network.
inline double yinit_at(const SolverState& state, double x0) {
  return state.value_network_values(0, Matrix::Constant(state.dim, 1, x0))(0, 0);
}

/// Seeds the scalar Y0 with the mean of a pilot roll-back under the initial
/// strategy, and sets the output scaling of every value network from the
/// pilot's per-time mean and spread.
inline void calibrate_outputs(SolverState& state, const SolverConfig& config, const FbsdeProblem& problem) {
  if (!state.y0_entry && state.y_scalers.empty()) return;
  const int batch = std::max(config.batch_size, 512);
  const auto paths =
      market::simulate_path_batch(problem.model, problem.grid, problem.x0, batch, config.seed, detail::kPilotBatch);
  const Matrix y = rollback_values(paths, state, problem, config.backstep);
  if (state.y0_entry) state.params.view(*state.y0_entry)(0, 0) = y.row(0).mean();
  for (auto& [index, scaler] : state.y_scalers) {
    const auto row = y.row(index);
    const double mean = row.mean();
    const double sd = std::sqrt((row.array() - mean).square().sum() / std::max<Eigen::Index>(row.size() - 1, 1));
    scaler = nn::Prescaler::uniform(1, mean, std::max(sd, 1e-3 * (1.0 + std::abs(mean))));
  }
}

/// Price readout of a trained state.
inline double estimate_price(const SolverVariant& variant, const SolverState& state, const TrainReport& report,
                             double x0) {
  switch (variant.kind) {
    case VariantKind::BackwardBatchVariance: {
      const auto& means = report.batch_means;
      if (variant.estimate == MeanEstimate::LastBatchMean) {
        if (means.empty()) throw InvalidSpec("estimate_price: no batches recorded");
        return means.back();
      }
      const auto w = static_cast<std::size_t>(variant.rolling_window);
      if (w > means.size()) throw InvalidSpec("estimate_price: rolling window exceeds history");
      double s = 0.0;
      for (std::size_t i = means.size() - w; i < means.size(); ++i) s += means[i];
      return s / static_cast<double>(w);
    }
    case VariantKind::BackwardLearnedY0:
    case VariantKind::ForwardFixed:
      return state.y0_parameter();
    case VariantKind::BackwardYinitNetwork:
    case VariantKind::ForwardRandom:
      return yinit_at(state, x0);
  }
  throw InvalidSpec("estimate_price: unknown variant");
}

/// Roll-back mean of Y under a frozen strategy, over n_paths fresh paths.
/// With `x_start`, paths start at that spot at grid index `first_step`;
/// otherwise they start from the problem's X0 distribution at index 0.
inline McEstimate rollback_mean(const SolverState& state, const FbsdeProblem& problem, BackstepMethod method,
                                int n_paths, std::uint64_t seed, std::optional<double> x_start = std::nullopt,
                                int first_step = 0, int chunk = 1024) {
  if (n_paths <= 0) throw InvalidSpec("rollback_mean: n_paths must be positive");
  if (first_step < 0 || first_step >= problem.grid.n_steps) throw InvalidSpec("rollback_mean: bad first_step");
  market::TimeGrid sub = problem.grid;
  sub.t0 = problem.grid.time(first_step);
  sub.n_steps = problem.grid.n_steps - first_step;
  const market::X0Sampler sampler = x_start ? market::X0Sampler{market::FixedX0{*x_start}} : problem.x0;

  std::vector<double> values;
  values.reserve(n_paths);
  for (int done = 0, c = 0; done < n_paths; ++c) {
    const int b = std::min(chunk, n_paths - done);
    const auto paths = market::simulate_path_batch(problem.model, sub, sampler, b, seed, detail::kEvalBatch + c);
    nn::Tape tape;
    const auto r = rollback_y(tape, paths, state, problem, method, first_step);
    const Matrix& y0 = tape.value(r.y.front());
    values.insert(values.end(), y0.data(), y0.data() + y0.size());
    done += b;
  }
  return detail::summarize(values);
}

/// Forward roll from the learned initial value; statistics of Y_T - g(X_T).
inline McEstimate forward_terminal_residual(const SolverState& state, const FbsdeProblem& problem, int n_paths,
                                            std::uint64_t seed, int chunk = 1024) {
  std::vector<double> values;
  values.reserve(n_paths);
  for (int done = 0, c = 0; done < n_paths; ++c) {
    const int b = std::min(chunk, n_paths - done);
    const auto paths =
        market::simulate_path_batch(problem.model, problem.grid, problem.x0, b, seed, detail::kEvalBatch + c);
    nn::Tape tape;
    const auto r = rollforward_y(tape, paths, state, problem, forward_initial_value(tape, state, paths));
    const Matrix res = tape.value(r.y.back()) - terminal_payoff(problem.payoff, paths.x.back());
    values.insert(values.end(), res.data(), res.data() + res.size());
    done += b;
  }
  return detail::summarize(values);
}

inline void finalize_report(TrainReport& report) {
  const auto& h = report.y0_history;
  if (h.empty()) return;
  report.y0_final = h.back();
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(report.range_window), h.size());
  const auto [lo, hi] = std::minmax_element(h.end() - static_cast<std::ptrdiff_t>(w), h.end());
  report.range_min = *lo;
  report.range_max = *hi;
}

using ProgressFn = std::function<void(int batch, const TrainReport&)>;

/// Mini-batch training: every batch draws fresh paths, rolls Y forward or
/// backward, and takes one Adam step on the variant's loss. A non-finite
/// loss or gradient stops training and returns the partial report with
/// `diverged` set.
inline TrainResult train(const SolverConfig& config, const FbsdeProblem& problem, const ProgressFn& progress = {}) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{SolverState::create(config, problem), {}, {}};
  auto& state = result.state;
  auto& report = result.report;
  report.range_window = config.range_window;
  calibrate_outputs(state, config, problem);
  result.optimizer = nn::AdamState::for_store(state.params, config.optimizer);
  const double x_ref = reference_x0(config, problem);

  for (int b = 0; b < config.n_batches; ++b) {
    try {
      const auto paths = market::simulate_path_batch(problem.model, problem.grid, problem.x0, config.batch_size,
                                                     config.seed, static_cast<std::uint64_t>(b));
      nn::Tape tape;
      const RolloutVars r =
          config.variant.is_forward()
              ? rollforward_y(tape, paths, state, problem, forward_initial_value(tape, state, paths))
              : rollback_y(tape, paths, state, problem, config.backstep);
      const nn::Var loss = compute_loss(tape, config.variant, state, r, paths, problem);
      const double lv = tape.scalar(loss);
      if (!std::isfinite(lv)) throw NumericalError("non-finite loss");
      const auto grad = tape.gradient(loss, state.params);
      nn::adam_update(state.params, grad, result.optimizer);

      report.loss_history.push_back(lv);
      report.batch_means.push_back(detail::row_mean(tape.value(r.y.front())));
    } catch (const NumericalError& e) {
      report.diverged = true;
      report.diagnostic = "batch " + std::to_string(b) + ": " + e.what();
      break;
    }

    double estimate = 0.0;
    if (config.variant.kind == VariantKind::BackwardBatchVariance) {
      const auto& m = report.batch_means;
      const std::size_t w = config.variant.estimate == MeanEstimate::LastBatchMean
                                ? 1
                                : std::min<std::size_t>(static_cast<std::size_t>(config.variant.rolling_window), m.size());
      double s = 0.0;
      for (std::size_t i = m.size() - w; i < m.size(); ++i) s += m[i];
      estimate = s / static_cast<double>(w);
    } else {
      estimate = estimate_price(config.variant, state, report, x_ref);
    }
    report.y0_history.push_back(estimate);
    if (progress) progress(b, report);
  }

  finalize_report(report);
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace dbsde::solver
