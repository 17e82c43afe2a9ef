#pragma once

#include "dbsde/market/paths.hpp"
#include "dbsde/nn/tape.hpp"
#include "dbsde/solver/config.hpp"
#include "dbsde/solver/rollout.hpp"
#include "dbsde/solver/state.hpp"

namespace dbsde::solver {

/// mean((y - target)^2) for two nodes of equal shape.
inline nn::Var anchored_loss(nn::Tape& tape, nn::Var y, nn::Var target) {
  return tape.mean(tape.square(tape.sub(y, target)));
}

/// Mini-batch variance mean((y0 - mean(y0))^2).
inline nn::Var batch_variance_loss(nn::Tape& tape, nn::Var y0) {
  const auto batch = tape.value(y0).cols();
  if (batch < 2) throw InvalidSpec("batch variance loss requires at least two paths");
  return anchored_loss(tape, y0, tape.broadcast(tape.mean(y0), batch));
}

inline nn::Var terminal_loss(nn::Tape& tape, nn::Var y_terminal, const Matrix& payoff) {
  return anchored_loss(tape, y_terminal, tape.constant(payoff));
}

/// The training objective of `variant` for one rollout on `paths`.
inline nn::Var compute_loss(nn::Tape& tape, const SolverVariant& variant, const SolverState& state,
                            const RolloutVars& rollout, const market::PathBatch& paths, const FbsdeProblem& problem) {
  switch (variant.kind) {
    case VariantKind::ForwardFixed:
    case VariantKind::ForwardRandom:
      return terminal_loss(tape, rollout.y.back(), terminal_payoff(problem.payoff, paths.x.back()));
    case VariantKind::BackwardBatchVariance:
      return batch_variance_loss(tape, rollout.y.front());
    case VariantKind::BackwardLearnedY0:
      return anchored_loss(tape, rollout.y.front(),
                           tape.broadcast(tape.param(state.params, state.y0_entry.value()), paths.batch));
    case VariantKind::BackwardYinitNetwork: {
      nn::Var loss = anchored_loss(tape, rollout.y.front(), state.value_network(tape, 0, paths.x.front()));
      for (int i : variant.intermediate_times)
        loss = tape.add(loss, anchored_loss(tape, rollout.y.at(i), state.value_network(tape, i, paths.x.at(i))));
      return loss;
    }
  }
  throw InvalidSpec("compute_loss: unknown variant");
}

}  // namespace dbsde::solver
