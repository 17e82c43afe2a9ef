#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dbsde/error.hpp"

namespace dbsde::market {

struct TimeGrid {
  double t0 = 0.0;
  double maturity = 1.0;
  int n_steps = 1;

  double dt() const { return (maturity - t0) / n_steps; }
  double time(int i) const { return t0 + i * dt(); }

  void validate() const {
    if (!(maturity > t0)) throw InvalidSpec("time grid: maturity must exceed t0");
    if (n_steps <= 0) throw InvalidSpec("time grid: n_steps must be positive");
  }
};

/// Independent geometric Brownian motions; sigma_ln is the lognormal
/// volatility, so the normal volatility is sigma_ln * x.
struct GbmModel {
  int dim = 1;
  double mu = 0.0;
  double sigma_ln = 0.2;

  void validate() const {
    if (dim <= 0) throw InvalidSpec("gbm: dim must be positive");
    if (!(sigma_ln > 0.0)) throw InvalidSpec("gbm: sigma_ln must be positive");
  }
};

struct RatesSpec {
  double r_l = 0.0;  ///< lending
  double r_b = 0.0;  ///< borrowing

  void validate() const {
    if (r_b < r_l) throw InvalidSpec("rates: r_b must be >= r_l");
  }
};

/// Long one call at strike_low, `weight_high` calls at strike_high, both on max(x).
struct CallCombination {
  double strike_low = 120.0;
  double strike_high = 150.0;
  double weight_low = 1.0;
  double weight_high = -2.0;
};

/// |max(x) - strike|.
struct Straddle {
  double strike = 100.0;
};

/// A payoff shape with a sign; sign -1 is the short position.
struct Payoff {
  std::variant<CallCombination, Straddle> shape = Straddle{};
  double sign = 1.0;

  static Payoff call_combination(CallCombination c = {}) { return Payoff{c, 1.0}; }
  static Payoff straddle(double strike = 100.0) { return Payoff{Straddle{strike}, 1.0}; }
  Payoff negated() const { return Payoff{shape, -sign}; }
  bool is_negated() const { return sign < 0.0; }

  /// Kink locations, used to align PDE grid nodes.
  std::vector<double> strikes() const {
    if (const auto* c = std::get_if<CallCombination>(&shape)) return {c->strike_low, c->strike_high};
    return {std::get<Straddle>(shape).strike};
  }
};

inline double eval_payoff(const Payoff& payoff, std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double v = 0.0;
  if (const auto* c = std::get_if<CallCombination>(&payoff.shape))
    v = c->weight_low * std::max(m - c->strike_low, 0.0) + c->weight_high * std::max(m - c->strike_high, 0.0);
  else
    v = std::abs(m - std::get<Straddle>(payoff.shape).strike);
  return payoff.sign * v;
}

inline double eval_payoff(const Payoff& payoff, double x) { return eval_payoff(payoff, std::span<const double>(&x, 1)); }

/// RiskNeutral: f = -r_l y + (r_b - r_l)(sum pi - y)^+.
/// DriftAdjusted additionally subtracts (mu - r_l) sum pi, which makes the
/// discrete Y the wealth of a self-financing portfolio when the asset drifts
/// at mu rather than r_l.
enum class GeneratorForm { RiskNeutral, DriftAdjusted };

struct GeneratorValue {
  double f;
  double df_dy;
  double df_dpi;  ///< derivative with respect to each pi_j (same for all j)
};

inline GeneratorValue eval_generator(GeneratorForm form, const RatesSpec& rates, double mu, double y,
                                     double pi_sum) {
  const double spread = rates.r_b - rates.r_l;
  const bool borrowing = pi_sum > y;
  GeneratorValue g{-rates.r_l * y + spread * std::max(pi_sum - y, 0.0), borrowing ? -rates.r_b : -rates.r_l,
                   borrowing ? spread : 0.0};
  if (form == GeneratorForm::DriftAdjusted) {
    g.f -= (mu - rates.r_l) * pi_sum;
    g.df_dpi -= (mu - rates.r_l);
  }
  return g;
}

/// Euler-Maruyama step of the asset, elementwise. Negative outputs are not
/// floored.
inline void gbm_step(std::span<const double> x, const GbmModel& model, double dt, std::span<const double> dw,
                     std::span<double> out) {
  for (std::size_t j = 0; j < x.size(); ++j)
    out[j] = x[j] + model.mu * x[j] * dt + model.sigma_ln * x[j] * dw[j];
}

inline double gbm_step(double x, const GbmModel& model, double dt, double dw) {
  return x + model.mu * x * dt + model.sigma_ln * x * dw;
}

}  // namespace dbsde::market
