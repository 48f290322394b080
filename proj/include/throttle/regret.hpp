#pragma once

// Regret of throttled users: (rate loss)^rho * (time spent throttled)^tau,
// both measured relative to the user's own demand.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "throttle/allocation.hpp"
#include "throttle/errors.hpp"
#include "throttle/population.hpp"

namespace throttle {

struct RegretParams {
  double rho = 2.0;     // exponent of the rate term
  double tau = 2.0;     // exponent of the time term
  double kappa = 0.01;  // price sensitivity, tiered plans only

  static RegretParams symmetric(double exponent, double kappa = 0.01) {
    return RegretParams{exponent, exponent, kappa};
  }

  /// Download optimization relies on rho == tau >= 2; for rho in (1, 2) the
  /// aggregate regret is not convex between kick points.
  void require_download_form() const {
    if (rho != tau)
      throw ValidationError("download optimization requires rho == tau (got rho=" +
                            std::to_string(rho) + ", tau=" + std::to_string(tau) + ")");
    if (!(rho >= 2.0))
      throw ValidationError("download optimization requires rho = tau >= 2; for rho in (1, 2) the "
                            "regret is not semi-convex and the closed-form minimizer does not apply");
  }
};

/// x^e, with small integer exponents done by repeated multiplication.
inline double power(double x, double e) {
  if (e == 2.0) return x * x;
  if (e >= 0.0 && e <= 8.0 && e == std::floor(e)) {
    double out = 1.0;
    for (int k = 0; k < static_cast<int>(e); ++k) out *= x;
    return out;
  }
  return std::pow(x, e);
}

inline double user_regret(const UserProfile& u, const Plan& plan, const RegretParams& params) {
  if (!is_throttled(u, plan)) return 0.0;
  const double d = u.demand();
  const double time_term = 1.0 - plan.threshold / d;
  double rate_term;
  if (plan.mode == Mode::Streaming) {
    rate_term = 1.0 - plan.throttle_rate / u.rate;
  } else {
    const double y = post_throttle_activity(u, plan.throttle_rate, plan.mode);
    rate_term = 1.0 - plan.throttle_rate * y / d;
  }
  return power(rate_term, params.rho) * power(time_term, params.tau);
}

inline double aggregate_regret(const Population& pop, const Plan& plan, const RegretParams& params) {
  double total = 0.0;
  for (const auto& u : pop) total += user_regret(u, plan, params);
  return total;
}

inline double tiered_user_regret(const UserProfile& u, const Plan& tier_plan, double price,
                                 const RegretParams& params) {
  return params.kappa * price + user_regret(u, tier_plan, params);
}

/// One tier as seen by the regret function: its plan, price and members
/// (positions in the population).
struct TierState {
  Plan plan;
  double price = 0.0;
  std::vector<std::size_t> members;
};

inline double tiered_aggregate_regret(const Population& pop, std::span<const TierState> tiers,
                                      const RegretParams& params) {
  std::vector<int> seen(pop.size(), 0);
  double total = 0.0;
  for (const auto& tier : tiers) {
    for (auto i : tier.members) {
      if (i >= pop.size()) throw ValidationError("tier member index out of range");
      ++seen[i];
      total += tiered_user_regret(pop[i], tier.plan, tier.price, params);
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (seen[i] != 1)
      throw ValidationError("tier memberships must partition the population (user " +
                            std::to_string(i) + " appears " + std::to_string(seen[i]) + " times)");
  return total;
}

}  // namespace throttle
