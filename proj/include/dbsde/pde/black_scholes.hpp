#pragma once

#include <cmath>

#include "dbsde/error.hpp"

namespace dbsde::pde {

enum class OptionKind { Call, Straddle };

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Black-Scholes value of a European call, or of call + put at the same strike.
inline double bs_price(OptionKind kind, double spot, double strike, double r, double sigma, double maturity) {
  if (!(spot > 0.0) || !(strike > 0.0) || !(sigma > 0.0) || !(maturity > 0.0))
    throw InvalidSpec("bs_price: spot, strike, sigma and maturity must be positive");
  const double sd = sigma * std::sqrt(maturity);
  const double d1 = (std::log(spot / strike) + (r + 0.5 * sigma * sigma) * maturity) / sd;
  const double d2 = d1 - sd;
  const double disc = strike * std::exp(-r * maturity);
  const double call = spot * norm_cdf(d1) - disc * norm_cdf(d2);
  if (kind == OptionKind::Call) return call;
  const double put = call - spot + disc;
  return call + put;
}

}  // namespace dbsde::pde
