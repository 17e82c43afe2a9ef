#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "dbsde/market/paths.hpp"
#include "dbsde/market/step.hpp"
#include "dbsde/nn/tape.hpp"
#include "dbsde/solver/config.hpp"
#include "dbsde/solver/problem.hpp"
#include "dbsde/solver/state.hpp"

namespace dbsde::solver {

/// Tape handles of one rollout: y[k] is (1 x batch) at time index
/// first_step + k, pi[k] is (dim x batch) for the step leaving that time.
struct RolloutVars {
  std::vector<nn::Var> y;
  std::vector<nn::Var> pi;
};

inline Matrix terminal_payoff(const market::Payoff& payoff, const Matrix& x) {
  Matrix g(1, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b)
    g(0, b) = market::eval_payoff(payoff, std::span<const double>(x.col(b).data(), static_cast<std::size_t>(x.rows())));
  return g;
}

/// Backward roll from Y_T = g(X_T) to the first time of `paths`, one
/// backstep per time index. Differentiable with respect to the strategy.
/// `first_step` is the grid index of paths.x[0] (non-zero for roll-backs
/// started at an intermediate time).
inline RolloutVars rollback_y(nn::Tape& tape, const market::PathBatch& paths, const SolverState& state,
                              const FbsdeProblem& problem, BackstepMethod method, int first_step = 0) {
  const market::StepContext ctx = problem.step_context();
  ctx.validate();
  const int n = paths.n_steps;
  const Eigen::Index batch = paths.batch;
  const int d = paths.dim;

  RolloutVars out;
  out.y.resize(n + 1, nn::Var{0});
  out.pi.resize(n, nn::Var{0});
  out.y[n] = tape.constant(terminal_payoff(problem.payoff, paths.x[n]));

  for (int k = n - 1; k >= 0; --k) {
    const nn::Var pi = state.pi(tape, first_step + k, paths.x[k]);
    const Matrix& piv = tape.value(pi);
    const Matrix& yn = tape.value(out.y[k + 1]);
    const Matrix& dw = paths.dw[k];

    Matrix y(1, batch), d_ynext(1, batch), d_pi(d, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto s = market::step_sums({piv.col(b).data(), static_cast<std::size_t>(d)},
                                       {dw.col(b).data(), static_cast<std::size_t>(d)}, ctx.model);
      const auto r = method == BackstepMethod::Exact ? market::backstep_exact(yn(0, b), s, ctx)
                                                     : market::backstep_taylor(yn(0, b), s, ctx);
      const auto p = market::backstep_partials(r.branch, ctx);
      y(0, b) = r.y;
      d_ynext(0, b) = p.d_y_next;
      for (int j = 0; j < d; ++j) d_pi(j, b) = p.d_pi_sum - p.noise_coeff * dw(j, b);
    }
    out.pi[k] = pi;
    out.y[k] = tape.elementwise({out.y[k + 1], pi}, std::move(y), {std::move(d_ynext), std::move(d_pi)});
  }
  return out;
}

/// Forward roll of Y from y0 (1 x batch) to maturity.
inline RolloutVars rollforward_y(nn::Tape& tape, const market::PathBatch& paths, const SolverState& state,
                                 const FbsdeProblem& problem, nn::Var y0) {
  const market::StepContext ctx = problem.step_context();
  ctx.validate();
  const int n = paths.n_steps;
  const Eigen::Index batch = paths.batch;
  const int d = paths.dim;
  if (tape.value(y0).rows() != 1 || tape.value(y0).cols() != batch)
    throw InvalidSpec("rollforward_y: y0 must be (1 x batch)");

  RolloutVars out;
  out.y.push_back(y0);
  for (int k = 0; k < n; ++k) {
    const nn::Var pi = state.pi(tape, k, paths.x[k]);
    const Matrix& piv = tape.value(pi);
    const Matrix& yc = tape.value(out.y[k]);
    const Matrix& dw = paths.dw[k];

    Matrix y(1, batch), d_y(1, batch), d_pi(d, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const std::span<const double> pis(piv.col(b).data(), static_cast<std::size_t>(d));
      const std::span<const double> dws(dw.col(b).data(), static_cast<std::size_t>(d));
      y(0, b) = market::forward_y_step(yc(0, b), pis, dws, ctx);
      const auto p = market::forward_y_partials(yc(0, b), market::step_sums(pis, dws, ctx.model).pi_sum, ctx);
      d_y(0, b) = p.d_y;
      for (int j = 0; j < d; ++j) d_pi(j, b) = p.d_pi_sum + p.noise_coeff * dw(j, b);
    }
    out.pi.push_back(pi);
    out.y.push_back(tape.elementwise({out.y[k], pi}, std::move(y), {std::move(d_y), std::move(d_pi)}));
  }
  return out;
}

/// Initial value fed to a forward rollout: the Y0 parameter or Yinit(X0).
inline nn::Var forward_initial_value(nn::Tape& tape, const SolverState& state, const market::PathBatch& paths) {
  if (state.y0_entry) return tape.broadcast(tape.param(state.params, *state.y0_entry), paths.batch);
  return state.value_network(tape, 0, paths.x[0]);
}

/// Values of a backward roll: row k holds Y at time index first_step + k.
inline Matrix rollback_values(const market::PathBatch& paths, const SolverState& state, const FbsdeProblem& problem,
                              BackstepMethod method, int first_step = 0) {
  nn::Tape tape;
  const auto r = rollback_y(tape, paths, state, problem, method, first_step);
  Matrix all(paths.n_steps + 1, paths.batch);
  for (int k = 0; k <= paths.n_steps; ++k) all.row(k) = tape.value(r.y[k]);
  return all;
}

}  // namespace dbsde::solver
