#pragma once

// Regret minimization for streaming populations.
//
// Streaming users can only be served at codec rates, so the throttle rate r
// ranges over a finite set V. For a fixed r, regret falls as T grows, and the
// capacity equality caps T; the optimum for that r therefore sits at the
// largest feasible T. Scanning every codec and solving for its threshold
// visits every valley of the regret-vs-T curve, which makes the scan exact.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "throttle/allocation.hpp"
#include "throttle/errors.hpp"
#include "throttle/population.hpp"
#include "throttle/regret.hpp"

namespace throttle {

class CodecSet {
 public:
  explicit CodecSet(std::vector<double> rates) : rates_(std::move(rates)) {
    if (rates_.empty()) throw ValidationError("codec set must not be empty");
    for (double v : rates_)
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("codec rates must be finite and nonnegative");
    std::sort(rates_.begin(), rates_.end());
    rates_.erase(std::unique(rates_.begin(), rates_.end()), rates_.end());
  }

  const std::vector<double>& rates() const noexcept { return rates_; }
  std::size_t size() const noexcept { return rates_.size(); }

  /// Largest codec not above r, if any.
  std::optional<double> snap(double r) const {
    auto it = std::upper_bound(rates_.begin(), rates_.end(), r);
    if (it == rates_.begin()) return std::nullopt;
    return *std::prev(it);
  }

 private:
  std::vector<double> rates_;
};

struct StreamCandidate {
  double rate = 0.0;
  double threshold = 0.0;
  double regret = 0.0;
  double residual = 0.0;  // |consumption - C|
};

struct StreamSolution {
  Plan plan = Plan::unlimited(Mode::Streaming);
  double regret = 0.0;
  std::vector<StreamCandidate> candidates;  // feasible codecs, ascending rate

  bool throttles() const noexcept { return !plan.is_unlimited(); }
};

inline double default_epsilon(double capacity) { return 1e-9 * std::max(1.0, capacity) / capacity; }

/// Threshold at which codec rate r exactly spends the capacity, under the
/// streaming membership rule (R_i x_i > T and R_i > r).
inline CapacitySolution solve_threshold(const Population& pop, double capacity, double rate,
                                        double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  return threshold_for_rate(pop, capacity, rate, Mode::Streaming, epsilon, 200);
}

inline StreamSolution optimize_streaming(const Population& pop, double capacity, const CodecSet& codecs,
                                         const RegretParams& params,
                                         std::optional<double> epsilon = std::nullopt) {
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
  if (!(params.rho >= 1.0 && params.tau >= 1.0))
    throw ValidationError("streaming regret exponents must be >= 1");
  StreamSolution out;
  if (capacity >= pop.total_demand()) return out;

  const double eps = epsilon.value_or(default_epsilon(capacity));
  for (double r : codecs.rates()) {
    auto sol = solve_threshold(pop, capacity, r, eps);
    if (!sol.solved()) continue;
    Plan plan{sol.value, r, Mode::Streaming};
    StreamCandidate c{r, sol.value, aggregate_regret(pop, plan, params),
                      std::abs(consumption(pop, plan) - capacity)};
    out.candidates.push_back(c);
  }
  if (out.candidates.empty())
    throw SolverError("no codec rate can meet the capacity (smallest codec " +
                      std::to_string(codecs.rates().front()) + " already exceeds it at T = 0)");

  // Ties (within rounding) go to the larger rate; candidates are ascending.
  const StreamCandidate* best = &out.candidates.front();
  for (const auto& c : out.candidates)
    if (c.regret <= best->regret + 1e-12 * std::max(1.0, best->regret)) best = &c;
  out.plan = Plan{best->threshold, best->rate, Mode::Streaming};
  out.regret = best->regret;
  return out;
}

}  // namespace throttle
