#pragma once

// Multi-tier plan games.
//
// The ISP (leader) splits its capacity across priced tiers and sets a
// (T_j, r_j) plan per tier; users (followers) pick the tier minimizing
//     kappa * p_j + throttling regret under tier j's plan.
// A deviating user anticipates that the ISP re-optimizes the plan of the tier
// it joins for the new membership, with capacity shares held fixed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "throttle/allocation.hpp"
#include "throttle/download_optimizer.hpp"
#include "throttle/errors.hpp"
#include "throttle/population.hpp"
#include "throttle/regret.hpp"
#include "throttle/stream_optimizer.hpp"

namespace throttle {

struct TierConfig {
  std::vector<double> prices;           // ascending
  std::vector<double> capacity_shares;  // C_j
  RegretParams params;                  // rho, tau, kappa
  Mode mode = Mode::Download;
  std::optional<CodecSet> codecs;       // required for streaming tiers

  std::size_t tier_count() const noexcept { return prices.size(); }

  double capacity() const {
    return std::accumulate(capacity_shares.begin(), capacity_shares.end(), 0.0);
  }

  void validate() const {
    if (prices.empty()) throw ValidationError("at least one tier price is required");
    for (std::size_t j = 1; j < prices.size(); ++j)
      if (!(prices[j - 1] < prices[j])) throw ValidationError("tier prices must be strictly ascending");
    if (capacity_shares.size() != prices.size())
      throw ValidationError("need one capacity share per tier");
    for (double c : capacity_shares)
      if (!(c >= 0.0)) throw ValidationError("capacity shares must be nonnegative");
    if (params.kappa < 0.0) throw ValidationError("kappa must be nonnegative");
    if (mode == Mode::Streaming && !codecs) throw ValidationError("streaming tiers need a codec set");
  }
};

/// Tier choice of every user (population order), with the class-ID encoding:
/// character i is the 0-based tier of user i.
struct Assignment {
  std::vector<std::size_t> tier_of;
  std::size_t tiers = 2;

  std::vector<std::size_t> members(std::size_t tier) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tier_of.size(); ++i)
      if (tier_of[i] == tier) out.push_back(i);
    return out;
  }

  std::string class_id() const {
    std::string id;
    id.reserve(tier_of.size());
    for (auto t : tier_of) id.push_back(static_cast<char>(t < 10 ? '0' + t : 'a' + (t - 10)));
    return id;
  }

  /// Decodes a base-`tiers` class number, most significant digit = user 0.
  static Assignment from_code(std::uint64_t code, std::size_t users, std::size_t tiers) {
    Assignment a{std::vector<std::size_t>(users, 0), tiers};
    for (std::size_t i = users; i-- > 0;) {
      a.tier_of[i] = static_cast<std::size_t>(code % tiers);
      code /= tiers;
    }
    return a;
  }

  static Assignment from_population(const Population& pop, std::size_t tiers) {
    Assignment a{std::vector<std::size_t>(pop.size(), 0), tiers};
    for (std::size_t i = 0; i < pop.size(); ++i) {
      if (!pop[i].tier) throw ValidationError("user " + std::to_string(pop[i].id) + " has no tier");
      if (*pop[i].tier >= tiers) throw ValidationError("tier index out of range");
      a.tier_of[i] = *pop[i].tier;
    }
    return a;
  }

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

// ---------------------------------------------------------------------------
// Single tier

/// Plan of one tier at a fixed capacity share. A tier whose share covers its
/// members' demand reports T = r = share; an empty tier gets the zero plan.
inline Plan optimize_tier(const Population& pop, std::span<const std::size_t> members, double share,
                          const TierConfig& config) {
  if (share < 0.0) throw ValidationError("capacity share must be nonnegative");
  if (members.empty()) return Plan{0.0, 0.0, config.mode};
  const Population sub = pop.subset(members);
  if (share >= sub.total_demand()) return Plan{share, share, config.mode};
  if (share == 0.0) return Plan{0.0, 0.0, config.mode};
  if (config.mode == Mode::Streaming) return optimize_streaming(sub, share, *config.codecs, config.params).plan;
  return optimize_download(sub, share, config.params).plan;
}

inline std::vector<Plan> tier_plans(const Population& pop, const TierConfig& config, const Assignment& a) {
  std::vector<Plan> plans;
  for (std::size_t j = 0; j < config.tier_count(); ++j)
    plans.push_back(optimize_tier(pop, a.members(j), config.capacity_shares[j], config));
  return plans;
}

inline std::vector<TierState> tier_states(const Population& pop, const TierConfig& config,
                                          const Assignment& a, const std::vector<Plan>& plans) {
  std::vector<TierState> out;
  for (std::size_t j = 0; j < config.tier_count(); ++j) out.push_back({plans[j], config.prices[j], a.members(j)});
  (void)pop;
  return out;
}

inline double current_regret(const Population& pop, const TierConfig& config, const Assignment& a,
                             const std::vector<Plan>& plans, std::size_t user) {
  const auto t = a.tier_of[user];
  return tiered_user_regret(pop[user], plans[t], config.prices[t], config.params);
}

/// Regret of `user` after moving to `target`, with the target tier's plan
/// re-optimized for its new membership. (The vacated tier is re-optimized as
/// well, but its plan does not enter the mover's regret.)
inline double deviation_regret(const Population& pop, const TierConfig& config, const Assignment& a,
                               std::size_t user, std::size_t target) {
  if (target >= config.tier_count()) throw ValidationError("target tier out of range");
  if (target == a.tier_of[user]) throw ValidationError("deviation target equals the current tier");
  Assignment moved = a;
  moved.tier_of[user] = target;
  const Plan plan = optimize_tier(pop, moved.members(target), config.capacity_shares[target], config);
  return tiered_user_regret(pop[user], plan, config.prices[target], config.params);
}

struct Deviation {
  std::size_t user = 0;
  std::size_t tier = 0;
  double delta = 0.0;  // deviation regret minus current regret (< 0)
};

struct EquilibriumCheck {
  bool is_nash = true;
  std::vector<Deviation> improving;
};

/// Strict improvements beyond this are treated as real; smaller differences are
/// indifference (which never triggers a move).
inline constexpr double kDeviationTolerance = 1e-12;

inline EquilibriumCheck check_equilibrium(const Population& pop, const TierConfig& config, const Assignment& a) {
  config.validate();
  const auto plans = tier_plans(pop, config, a);
  EquilibriumCheck out;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const double cur = current_regret(pop, config, a, plans, i);
    for (std::size_t t = 0; t < config.tier_count(); ++t) {
      if (t == a.tier_of[i]) continue;
      const double delta = deviation_regret(pop, config, a, i, t) - cur;
      if (delta < -kDeviationTolerance) out.improving.push_back({i, t, delta});
    }
  }
  out.is_nash = out.improving.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Two-tier enumeration and capacity sweep

struct Equilibrium {
  Assignment assignment;
  std::string class_id;
  double regret = 0.0;  // aggregate tiered regret
  std::vector<Plan> plans;
};

inline constexpr std::size_t kEnumerationCap = 20;

inline TierConfig split_config(const std::vector<double>& prices, const RegretParams& params, double capacity,
                               double split) {
  return TierConfig{prices, {split * capacity, (1.0 - split) * capacity}, params, Mode::Download, std::nullopt};
}

inline std::vector<Equilibrium> enumerate_equilibria(const Population& pop, const TierConfig& config,
                                                     std::size_t cap = kEnumerationCap) {
  config.validate();
  if (config.tier_count() != 2) throw ValidationError("equilibrium enumeration needs exactly two tiers");
  if (pop.size() > cap)
    throw ValidationError("enumeration is limited to " + std::to_string(cap) + " users (" +
                          std::to_string(pop.size()) + " given); use stackelberg best-response dynamics");
  std::vector<Equilibrium> out;
  const std::uint64_t classes = std::uint64_t{1} << pop.size();
  for (std::uint64_t code = 0; code < classes; ++code) {
    const auto a = Assignment::from_code(code, pop.size(), 2);
    if (!check_equilibrium(pop, config, a).is_nash) continue;
    auto plans = tier_plans(pop, config, a);
    const double regret = tiered_aggregate_regret(pop, tier_states(pop, config, a, plans), config.params);
    out.push_back({a, a.class_id(), regret, std::move(plans)});
  }
  return out;
}

struct SplitRow {
  double split = 0.0;
  std::vector<Equilibrium> equilibria;
  std::optional<double> min_regret, avg_regret, max_regret;
};

inline std::vector<SplitRow> sweep_splits(const Population& pop, const std::vector<double>& prices,
                                          const RegretParams& params, double capacity, double step) {
  if (!(step > 0.0 && step < 1.0)) throw ValidationError("split step must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  std::vector<SplitRow> rows;
  for (std::size_t k = 0; k <= n; ++k) {
    const double split = std::min(1.0, static_cast<double>(k) * step);
    SplitRow row;
    row.split = split;
    row.equilibria = enumerate_equilibria(pop, split_config(prices, params, capacity, split));
    if (!row.equilibria.empty()) {
      double lo = kUnlimited, hi = -kUnlimited, sum = 0.0;
      for (const auto& e : row.equilibria) {
        lo = std::min(lo, e.regret);
        hi = std::max(hi, e.regret);
        sum += e.regret;
      }
      row.min_regret = lo;
      row.avg_regret = sum / static_cast<double>(row.equilibria.size());
      row.max_regret = hi;
    }
    rows.push_back(std::move(row));
    if (split >= 1.0) break;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// N-tier constrained minimization with r_j = T_j
//
//   minimize   sum_j sum_{i in H_j} (1 - T_j/d_i)^(rho + tau)
//   subject to sum_j g_j(T_j) = C,   lo <= T_j <= hi
//
// where g_j(T) is tier j's consumption at (T, T). g_j is nondecreasing, so
// the problem is solved over the capacity each tier consumes: start from a
// proportional split with nonnegative slack, then move capacity between tier
// pairs with a line search until no transfer lowers the objective.

struct ThresholdBounds {
  double lo = 0.0;
  double hi = kUnlimited;

  /// [d_min, d_max] over the whole population.
  static ThresholdBounds demand_range(const Population& pop) {
    ThresholdBounds b{kUnlimited, 0.0};
    for (const auto& u : pop) {
      b.lo = std::min(b.lo, u.demand());
      b.hi = std::max(b.hi, u.demand());
    }
    return b;
  }
};

struct MultiTierSolution {
  std::vector<double> thresholds;   // T_j (= r_j)
  std::vector<double> consumption;  // capacity each tier uses
  double regret = 0.0;              // throttling part; price terms are constant here
  double residual = 0.0;            // sum_j consumption - C
  bool unconstrained = false;       // capacity covers every demand
  int sweeps = 0;

  std::vector<Plan> plans(Mode mode = Mode::Download) const {
    std::vector<Plan> out;
    for (double t : thresholds) out.push_back(Plan{t, t, mode});
    return out;
  }
};

namespace detail {

class TierCurve {
 public:
  TierCurve(const Population& pop, const std::vector<std::size_t>& members, ThresholdBounds bounds, double exponent)
      : exponent_(exponent) {
    std::vector<double> d;
    for (auto i : members) d.push_back(pop[i].demand());
    curve_ = DemandCurve(d);
    lo_ = bounds.lo;
    const double top = d.empty() ? bounds.lo : *std::max_element(d.begin(), d.end());
    hi_ = std::max(lo_, std::min(bounds.hi, top));
  }

  bool empty() const { return curve_.size() == 0; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double consumption(double t) const { return empty() ? 0.0 : curve_.consumption(t, t); }
  double min_consumption() const { return consumption(lo_); }
  double max_consumption() const { return consumption(hi_); }

  double regret(double t) const {
    double total = 0.0;
    for (double d : curve_.sorted_demands())
      if (d > t) total += std::pow(1.0 - t / d, exponent_);
    return total;
  }

  /// Smallest T in [lo, hi] with consumption(T) >= c.
  double threshold_for(double c) const {
    if (empty() || c <= min_consumption()) return lo_;
    if (c >= max_consumption()) return hi_;
    double a = lo_, b = hi_;
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, b); ++it) {
      const double m = 0.5 * (a + b);
      if (consumption(m) < c)
        a = m;
      else
        b = m;
    }
    return b;
  }

  double regret_at_capacity(double c) const { return regret(threshold_for(c)); }

 private:
  DemandCurve curve_;
  double exponent_;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

/// Minimizes phi on [a, b]: coarse grid, then golden-section around the best node.
template <class F>
double line_minimize(F phi, double a, double b) {
  constexpr int kGrid = 32;
  double best_x = 0.0, best_v = phi(0.0);
  int best_k = -1;
  for (int k = 0; k <= kGrid; ++k) {
    const double x = a + (b - a) * k / kGrid;
    const double v = phi(x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
      best_k = k;
    }
  }
  double lo = best_k < 0 ? std::max(a, -(b - a) / kGrid) : a + (b - a) * std::max(0, best_k - 1) / kGrid;
  double hi = best_k < 0 ? std::min(b, (b - a) / kGrid) : a + (b - a) * std::min(kGrid, best_k + 1) / kGrid;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = phi(x1), f2 = phi(x2);
  for (int it = 0; it < 100 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = phi(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = phi(x2);
    }
  }
  const double x = f1 < f2 ? x1 : x2;
  const double v = std::min(f1, f2);
  if (v < best_v) return x;
  return best_x;
}

}  // namespace detail

inline MultiTierSolution solve_multi_tier(const Population& pop, const Assignment& a, double capacity,
                                          const RegretParams& params,
                                          std::optional<ThresholdBounds> bounds = std::nullopt) {
  params.require_download_form();
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
  if (a.tier_of.size() != pop.size()) throw ValidationError("assignment size does not match population");
  const ThresholdBounds b = bounds.value_or(ThresholdBounds::demand_range(pop));
  if (!(b.lo >= 0.0 && b.lo <= b.hi)) throw ValidationError("invalid threshold bounds");

  std::vector<detail::TierCurve> tiers;
  for (std::size_t j = 0; j < a.tiers; ++j) tiers.emplace_back(pop, a.members(j), b, params.rho + params.tau);
  const std::size_t k = tiers.size();

  MultiTierSolution out;
  double low = 0.0, high = 0.0;
  for (const auto& t : tiers) {
    low += t.min_consumption();
    high += t.max_consumption();
  }
  std::vector<double> cap(k);
  if (capacity >= high) {
    out.unconstrained = true;
    for (std::size_t j = 0; j < k; ++j) cap[j] = tiers[j].max_consumption();
  } else {
    if (low > capacity)
      throw SolverError("no feasible start: consumption at the lower threshold bound (" + std::to_string(low) +
                        ") already exceeds capacity (" + std::to_string(capacity) + ")");
    const double theta = (capacity - low) / (high - low);
    for (std::size_t j = 0; j < k; ++j)
      cap[j] = tiers[j].min_consumption() + theta * (tiers[j].max_consumption() - tiers[j].min_consumption());

    auto objective = [&]() {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += tiers[j].regret_at_capacity(cap[j]);
      return s;
    };
    double current = objective();
    for (int sweep = 0; sweep < 500; ++sweep) {
      out.sweeps = sweep + 1;
      const double before = current;
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t q = p + 1; q < k; ++q) {
          if (tiers[p].empty() || tiers[q].empty()) continue;
          // Moving delta from p to q.
          const double dmin = std::max(cap[p] - tiers[p].max_consumption(), tiers[q].min_consumption() - cap[q]);
          const double dmax = std::min(cap[p] - tiers[p].min_consumption(), tiers[q].max_consumption() - cap[q]);
          if (!(dmax > dmin)) continue;
          auto phi = [&](double delta) {
            return tiers[p].regret_at_capacity(cap[p] - delta) + tiers[q].regret_at_capacity(cap[q] + delta);
          };
          const double base = phi(0.0);
          const double delta = detail::line_minimize(phi, std::min(0.0, dmin), std::max(0.0, dmax));
          if (phi(delta) < base) {
            cap[p] -= delta;
            cap[q] += delta;
          }
        }
      }
      current = objective();
      if (before - current <= 1e-15 * std::max(1.0, current)) break;
    }
  }

  double used = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double t = tiers[j].threshold_for(cap[j]);
    out.thresholds.push_back(t);
    out.consumption.push_back(tiers[j].consumption(t));
    out.regret += tiers[j].regret(t);
    used += out.consumption.back();
  }
  out.residual = used - capacity;
  return out;
}

// ---------------------------------------------------------------------------
// Leader/follower iteration

struct IterationLog {
  std::size_t iteration = 0;
  std::size_t moves = 0;
  double leader_regret = 0.0;  // aggregate tiered regret after the leader step
  std::vector<double> thresholds;
};

struct EquilibriumReport {
  bool converged = false;
  std::size_t iterations = 0;
  Assignment assignment;
  std::vector<Plan> tier_plans;
  std::vector<double> capacity_shares;
  double regret = 0.0;
  std::vector<IterationLog> log;
};

/// One follower pass: users in ascending index each take their best strictly
/// improving deviation given the current plans; plans of the two affected
/// tiers are re-optimized at fixed shares after every move.
inline std::size_t follower_pass(const Population& pop, const TierConfig& config, Assignment& a,
                                 std::vector<Plan>& plans) {
  std::size_t moves = 0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const double cur = current_regret(pop, config, a, plans, i);
    std::size_t best_tier = a.tier_of[i];
    double best = cur;
    for (std::size_t t = 0; t < config.tier_count(); ++t) {
      if (t == a.tier_of[i]) continue;
      // The price term alone already rules the move out.
      if (config.params.kappa * config.prices[t] >= best - kDeviationTolerance) continue;
      const double dev = deviation_regret(pop, config, a, i, t);
      if (dev < best - kDeviationTolerance) {
        best = dev;
        best_tier = t;
      }
    }
    if (best_tier == a.tier_of[i]) continue;
    const std::size_t from = a.tier_of[i];
    a.tier_of[i] = best_tier;
    plans[from] = optimize_tier(pop, a.members(from), config.capacity_shares[from], config);
    plans[best_tier] = optimize_tier(pop, a.members(best_tier), config.capacity_shares[best_tier], config);
    ++moves;
  }
  return moves;
}

inline EquilibriumReport stackelberg_iterate(const Population& pop, const Assignment& initial,
                                             const std::vector<double>& prices, double capacity,
                                             const RegretParams& params, std::size_t max_iters,
                                             std::optional<ThresholdBounds> bounds = std::nullopt) {
  params.require_download_form();
  if (initial.tiers != prices.size()) throw ValidationError("assignment tier count does not match prices");
  TierConfig config{prices, std::vector<double>(prices.size(), 0.0), params, Mode::Download, std::nullopt};
  config.validate();
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");

  EquilibriumReport report;
  report.assignment = initial;

  auto leader = [&](const Assignment& a) {
    auto sol = solve_multi_tier(pop, a, capacity, params, bounds);
    // Capacity the leader leaves unused is open to whichever tier a single
    // deviating user joins.
    const double slack = std::max(0.0, -sol.residual);
    config.capacity_shares = sol.consumption;
    for (double& c : config.capacity_shares) c += slack;
    return sol;
  };
  auto total_regret = [&](const Assignment& a, const std::vector<Plan>& plans) {
    return tiered_aggregate_regret(pop, tier_states(pop, config, a, plans), params);
  };

  auto sol = leader(report.assignment);
  report.tier_plans = sol.plans();
  report.capacity_shares = sol.consumption;
  report.regret = total_regret(report.assignment, report.tier_plans);

  for (std::size_t it = 1; it <= max_iters; ++it) {
    if (it > 1) sol = leader(report.assignment);
    report.tier_plans = sol.plans();
    report.capacity_shares = sol.consumption;
    report.iterations = it;

    IterationLog entry{it, 0, total_regret(report.assignment, report.tier_plans), sol.thresholds};
    std::vector<Plan> plans = report.tier_plans;
    Assignment next = report.assignment;
    entry.moves = follower_pass(pop, config, next, plans);
    report.log.push_back(entry);
    report.regret = entry.leader_regret;

    if (entry.moves == 0) {
      // Nobody moved: confirm the leader would answer the same membership
      // the same way before calling it a fixed point.
      const auto again = solve_multi_tier(pop, report.assignment, capacity, params, bounds);
      bool stable = true;
      for (std::size_t j = 0; j < again.thresholds.size(); ++j)
        if (std::abs(again.thresholds[j] - sol.thresholds[j]) > 1e-9) stable = false;
      if (stable) {
        report.converged = true;
        break;
      }
    }
    report.assignment = std::move(next);
  }
  return report;
}

inline EquilibriumReport stackelberg_iterate(const Population& pop, const std::vector<double>& prices,
                                             double capacity, const RegretParams& params, std::size_t max_iters,
                                             std::uint64_t seed,
                                             std::optional<ThresholdBounds> bounds = std::nullopt) {
  const Population seeded = assign_tiers_binomial(pop, seed, prices.size());
  return stackelberg_iterate(pop, Assignment::from_population(seeded, prices.size()), prices, capacity, params,
                             max_iters, bounds);
}

/// Tier index never decreases with rate (users with equal rates may differ).
inline bool is_monotone_in_rate(const Population& pop, const Assignment& a) {
  for (std::size_t i = 0; i < pop.size(); ++i)
    for (std::size_t j = i + 1; j < pop.size(); ++j)
      if (pop[i].rate < pop[j].rate && a.tier_of[i] > a.tier_of[j]) return false;
  return true;
}

}  // namespace throttle
