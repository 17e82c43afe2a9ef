#pragma once

#include <cmath>
#include <span>

#include "dbsde/error.hpp"
#include "dbsde/market/model.hpp"

namespace dbsde::market {

/// Everything a single Y time step needs besides the state itself.
struct StepContext {
  GbmModel model;
  RatesSpec rates;
  GeneratorForm form = GeneratorForm::DriftAdjusted;
  double dt = 0.01;

  void validate() const {
    if (!(dt > 0.0)) throw InvalidSpec("step: dt must be positive");
    if (!(1.0 + rates.r_l * dt > 0.0) || !(1.0 + rates.r_b * dt > 0.0))
      throw InvalidSpec("step: 1 + r dt must be positive for both rates");
  }
};

/// Sign of the cash position Y - sum(pi): Borrowing when negative.
enum class Branch { Borrowing, Lending };

struct StepSums {
  double pi_sum = 0.0;
  double noise = 0.0;  ///< sum_j pi_j sigma_ln dW_j
};

inline StepSums step_sums(std::span<const double> pi, std::span<const double> dw, const GbmModel& model) {
  StepSums s;
  for (std::size_t j = 0; j < pi.size(); ++j) {
    s.pi_sum += pi[j];
    s.noise += pi[j] * model.sigma_ln * dw[j];
  }
  return s;
}

/// y_{i+1} = y_i - f(y_i, pi) dt + sum_j pi_j sigma_ln dW_j.
inline double forward_y_step(double y, std::span<const double> pi, std::span<const double> dw,
                             const StepContext& ctx) {
  const StepSums s = step_sums(pi, dw, ctx.model);
  const auto g = eval_generator(ctx.form, ctx.rates, ctx.model.mu, y, s.pi_sum);
  return y - g.f * ctx.dt + s.noise;
}

struct ForwardPartials {
  double d_y;        ///< d y_{i+1} / d y_i
  double d_pi_sum;   ///< d y_{i+1} / d pi_j = d_pi_sum + noise_coeff * dW_j
  double noise_coeff;
};

inline ForwardPartials forward_y_partials(double y, double pi_sum, const StepContext& ctx) {
  const auto g = eval_generator(ctx.form, ctx.rates, ctx.model.mu, y, pi_sum);
  return {1.0 - g.df_dy * ctx.dt, -g.df_dpi * ctx.dt, ctx.model.sigma_ln};
}

/// Coefficient of sum(pi) dt in the numerator of the branch solution.
inline double branch_pi_coeff(Branch b, const StepContext& ctx) {
  const bool adjusted = ctx.form == GeneratorForm::DriftAdjusted;
  if (b == Branch::Borrowing) return adjusted ? ctx.rates.r_b - ctx.model.mu : ctx.rates.r_b - ctx.rates.r_l;
  return adjusted ? ctx.rates.r_l - ctx.model.mu : 0.0;
}

inline double branch_rate(Branch b, const StepContext& ctx) {
  return b == Branch::Borrowing ? ctx.rates.r_b : ctx.rates.r_l;
}

/// Closed-form solution of the implicit step equation with the generator
/// frozen on one linear branch:
///   y_i = (y_{i+1} + k sum(pi) dt - noise) / (1 + r dt).
inline double branch_solution(Branch b, double y_next, const StepSums& s, const StepContext& ctx) {
  return (y_next + branch_pi_coeff(b, ctx) * s.pi_sum * ctx.dt - s.noise) / (1.0 + branch_rate(b, ctx) * ctx.dt);
}

struct BackstepResult {
  double y;
  Branch branch;
};

/// Exact solution of y_i - f(y_i, pi) dt = y_{i+1} - noise. Each branch is
/// solved in closed form and the one satisfying its own inequality is kept;
/// since y - f(y) dt is strictly increasing when 1 + r dt > 0, exactly one
/// branch is consistent away from the kink.
inline BackstepResult backstep_exact(double y_next, const StepSums& s, const StepContext& ctx) {
  const double yb = branch_solution(Branch::Borrowing, y_next, s, ctx);
  if (s.pi_sum > yb) return {yb, Branch::Borrowing};
  const double yl = branch_solution(Branch::Lending, y_next, s, ctx);
  if (s.pi_sum <= yl) return {yl, Branch::Lending};

  // Rounding can leave both inequalities marginally violated at the kink.
  const double tol = 1e-9 * std::max(1.0, std::abs(s.pi_sum));
  if (std::abs(yb - s.pi_sum) <= tol && std::abs(yl - s.pi_sum) <= tol) return {yl, Branch::Lending};
  throw NumericalError("backstep_exact: no self-consistent branch (violated step precondition?)");
}

inline BackstepResult backstep_exact(double y_next, std::span<const double> pi, std::span<const double> dw,
                                     const StepContext& ctx) {
  return backstep_exact(y_next, step_sums(pi, dw, ctx.model), ctx);
}

/// First-order Taylor step: the generator and its y-derivative are frozen at
/// y_{i+1}, so the branch is picked by comparing sum(pi) with y_{i+1}. The
/// resulting closed forms coincide with the exact ones branch by branch.
inline BackstepResult backstep_taylor(double y_next, const StepSums& s, const StepContext& ctx) {
  const Branch b = s.pi_sum > y_next ? Branch::Borrowing : Branch::Lending;
  return {branch_solution(b, y_next, s, ctx), b};
}

inline BackstepResult backstep_taylor(double y_next, std::span<const double> pi, std::span<const double> dw,
                                      const StepContext& ctx) {
  return backstep_taylor(y_next, step_sums(pi, dw, ctx.model), ctx);
}

struct BackstepPartials {
  double d_y_next;     ///< d y_i / d y_{i+1}
  double d_pi_sum;     ///< d y_i / d pi_j = d_pi_sum - noise_coeff * dW_j
  double noise_coeff;
};

/// Local derivatives of the branch solution; constant on each branch.
inline BackstepPartials backstep_partials(Branch b, const StepContext& ctx) {
  const double den = 1.0 + branch_rate(b, ctx) * ctx.dt;
  return {1.0 / den, branch_pi_coeff(b, ctx) * ctx.dt / den, ctx.model.sigma_ln / den};
}

}  // namespace dbsde::market
