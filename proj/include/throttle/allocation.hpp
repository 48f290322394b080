#pragma once

// Capacity accounting for a (threshold, rate) throttling plan.
//
// A plan (T, r) caps every user at T bits per cycle, after which the user is
// served at rate r for the remainder of the cycle. A throttled user i that
// reaches the cap at fraction T/d_i of its cycle consumes
//
//     B_i = T + r * y_i * (1 - T/d_i),    d_i = R_i * x_i
//
// where y_i is the post-throttle activity: x_i for streaming users and
// min(d_i / r, 1) for downloaders, who stay online longer to recover bits.
// The ISP picks (T, r) so that total consumption equals its capacity C.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "throttle/errors.hpp"
#include "throttle/population.hpp"

namespace throttle {

enum class Mode { Streaming, Download };

inline constexpr double kUnlimited = std::numeric_limits<double>::infinity();

struct Plan {
  double threshold = kUnlimited;      // T
  double throttle_rate = kUnlimited;  // r
  Mode mode = Mode::Download;

  /// The "no throttling needed" result: nobody ever reaches the threshold.
  static Plan unlimited(Mode mode) { return Plan{kUnlimited, kUnlimited, mode}; }

  bool is_unlimited() const noexcept { return std::isinf(threshold); }
};

struct Partition {
  std::vector<std::size_t> throttled;   // H
  std::vector<std::size_t> low_demand;  // L_D: never reach the threshold
  std::vector<std::size_t> low_rate;    // L_R: reach it, but r already covers their rate
};

struct ThresholdBound {
  double t_hat = kUnlimited;
  std::vector<std::size_t> h_hat;

  bool unconstrained() const noexcept { return std::isinf(t_hat); }
};

enum class SolveStatus { Solved, Infeasible, Unconstrained };

/// Outcome of inverting the capacity equality for one plan coordinate.
struct CapacitySolution {
  SolveStatus status = SolveStatus::Infeasible;
  double value = 0.0;  // T or r depending on the solver
  int iterations = 0;

  bool solved() const noexcept { return status == SolveStatus::Solved; }
};

// ---------------------------------------------------------------------------
// Per-user rules

inline bool is_throttled(const UserProfile& u, double threshold, double rate, Mode mode) {
  if (mode == Mode::Download) return u.demand() > std::max(threshold, rate);
  return u.demand() > threshold && u.rate > rate;
}

inline bool is_throttled(const UserProfile& u, const Plan& plan) {
  return is_throttled(u, plan.threshold, plan.throttle_rate, plan.mode);
}

/// Post-throttle active fraction y_i.
inline double post_throttle_activity(const UserProfile& u, double rate, Mode mode) {
  if (mode == Mode::Streaming) return u.activity;
  if (rate <= 0.0) return 1.0;
  return std::min(u.demand() / rate, 1.0);
}

/// Bits consumed by one user per cycle under the plan.
inline double allocation(const UserProfile& u, double threshold, double rate, Mode mode) {
  if (!is_throttled(u, threshold, rate, mode)) return u.demand();
  const double y = post_throttle_activity(u, rate, mode);
  return threshold + rate * y * (1.0 - threshold / u.demand());
}

inline double allocation(const UserProfile& u, const Plan& plan) {
  return allocation(u, plan.threshold, plan.throttle_rate, plan.mode);
}

// ---------------------------------------------------------------------------
// Population-level accounting

inline Partition partition(const Population& pop, const Plan& plan) {
  Partition p;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto& u = pop[i];
    if (is_throttled(u, plan))
      p.throttled.push_back(i);
    else if (u.demand() <= plan.threshold)
      p.low_demand.push_back(i);
    else
      p.low_rate.push_back(i);
  }
  return p;
}

inline double consumption(const Population& pop, double threshold, double rate, Mode mode) {
  double total = 0.0;
  for (const auto& u : pop) total += allocation(u, threshold, rate, mode);
  return total;
}

inline double consumption(const Population& pop, const Plan& plan) {
  return consumption(pop, plan.threshold, plan.throttle_rate, plan.mode);
}

/// Largest feasible threshold (reached at r = 0) and its throttled set, found
/// by shrinking H from the full population until it is self-consistent.
inline ThresholdBound max_threshold(const Population& pop, double capacity, Mode /*mode*/ = Mode::Download) {
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
  if (capacity >= pop.total_demand()) return ThresholdBound{};

  std::vector<std::size_t> order(pop.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pop[a].demand() < pop[b].demand(); });

  std::size_t first = 0;  // order[first..] is H
  double low_sum = 0.0;
  double t_hat = capacity / static_cast<double>(pop.size());
  while (first < order.size() && pop[order[first]].demand() <= t_hat) {
    low_sum += pop[order[first]].demand();
    ++first;
    t_hat = (capacity - low_sum) / static_cast<double>(order.size() - first);
  }
  ThresholdBound bound{t_hat, {order.begin() + static_cast<std::ptrdiff_t>(first), order.end()}};
  std::sort(bound.h_hat.begin(), bound.h_hat.end());
  return bound;
}

namespace detail {

/// Solves consumption(T) == C for T with H held fixed (linear in T).
inline double linear_threshold(const Population& pop, double capacity, double rate, Mode mode,
                               const std::vector<bool>& in_h) {
  double low_sum = 0.0, rate_sum = 0.0, slope = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto& u = pop[i];
    if (!in_h[i]) {
      low_sum += u.demand();
      continue;
    }
    const double y = post_throttle_activity(u, rate, mode);
    rate_sum += rate * y;
    slope += 1.0 - rate * y / u.demand();
  }
  if (slope <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (capacity - low_sum - rate_sum) / slope;
}

inline std::vector<bool> membership(const Population& pop, double threshold, double rate, Mode mode) {
  std::vector<bool> in_h(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) in_h[i] = is_throttled(pop[i], threshold, rate, mode);
  return in_h;
}

}  // namespace detail

/// Threshold T that exactly spends `capacity` at throttle rate r.
///
/// H depends on T, so the capacity equality is solved as a fixed point:
/// consumption is continuous and nondecreasing in T for fixed r, so bisection
/// over [0, T_hat] brackets the root, and the linear solve for the bracketed H
/// polishes it. `rel_tol` bounds |consumption - C| / C.
inline CapacitySolution threshold_for_rate(const Population& pop, double capacity, double rate,
                                           Mode mode, double rel_tol = 1e-9, int max_iter = 200) {
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
  if (rate < 0.0) throw ValidationError("throttle rate must be nonnegative");
  if (capacity >= pop.total_demand()) return {SolveStatus::Unconstrained, kUnlimited, 0};

  const double tol = rel_tol * capacity;
  const double t_hat = max_threshold(pop, capacity, mode).t_hat;
  auto residual = [&](double t) { return consumption(pop, t, rate, mode) - capacity; };

  const double r0 = residual(0.0);
  if (r0 > tol) return {SolveStatus::Infeasible, 0.0, 0};
  if (std::abs(r0) <= tol && r0 >= 0.0) return {SolveStatus::Solved, 0.0, 0};

  double lo = 0.0, hi = t_hat;
  int iter = 0;
  while (iter < max_iter && hi - lo > 1e-15 * std::max(1.0, t_hat)) {
    ++iter;
    const double mid = 0.5 * (lo + hi);
    if (residual(mid) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  double best = 0.5 * (lo + hi);
  double best_res = std::abs(residual(best));

  const double polished =
      detail::linear_threshold(pop, capacity, rate, mode, detail::membership(pop, best, rate, mode));
  if (std::isfinite(polished) && polished >= 0.0 && polished <= t_hat) {
    const double res = std::abs(residual(polished));
    if (res <= best_res) {
      best = polished;
      best_res = res;
    }
  }
  if (best_res > tol)
    throw SolverError("threshold search did not converge within " + std::to_string(max_iter) +
                      " iterations (residual " + std::to_string(best_res) + ")");
  return {SolveStatus::Solved, best, iter};
}

/// Throttle rate r that exactly spends `capacity` at threshold T; the mirror
/// image of threshold_for_rate (consumption is nondecreasing in r).
inline CapacitySolution rate_for_threshold(const Population& pop, double capacity, double threshold,
                                           Mode mode, double rel_tol = 1e-9, int max_iter = 200) {
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
  if (threshold < 0.0) throw ValidationError("threshold must be nonnegative");
  if (capacity >= pop.total_demand()) return {SolveStatus::Unconstrained, kUnlimited, 0};

  const double tol = rel_tol * capacity;
  auto residual = [&](double r) { return consumption(pop, threshold, r, mode) - capacity; };
  const double r0 = residual(0.0);
  if (r0 > tol) return {SolveStatus::Infeasible, 0.0, 0};

  double top = 0.0;
  for (const auto& u : pop) top = std::max(top, mode == Mode::Download ? u.demand() : u.rate);
  double lo = 0.0, hi = top;
  int iter = 0;
  while (iter < max_iter && hi - lo > 1e-15 * std::max(1.0, top)) {
    ++iter;
    const double mid = 0.5 * (lo + hi);
    if (residual(mid) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  const double r = 0.5 * (lo + hi);
  if (std::abs(residual(r)) > tol)
    throw SolverError("rate search did not converge within " + std::to_string(max_iter) + " iterations");
  return {SolveStatus::Solved, r, iter};
}

// ---------------------------------------------------------------------------
// DemandCurve: O(log N) capacity accounting for download populations.
//
// With demands folded (x_i -> 1) a throttled downloader consumes
// T + r(1 - T/d_i), so with demands sorted and prefix sums of d and 1/d the
// consumption for any (T, r) is
//     sum_{d <= max(T,r)} d + h*T + r*(h - T*S),   S = sum_H 1/d,  h = |H|.
// Between consecutive demands the expression is linear in T (and in r), so the
// capacity equality is inverted exactly by locating the segment and solving.

class DemandCurve {
 public:
  DemandCurve() = default;

  explicit DemandCurve(std::span<const double> demands) {
    const std::size_t n = demands.size();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return demands[a] < demands[b]; });
    sorted_.resize(n);
    sum_.assign(n + 1, 0.0);
    inv_sum_.assign(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double d = demands[order_[k]];
      if (!(d > 0.0)) throw ValidationError("demands must be positive");
      sorted_[k] = d;
      sum_[k + 1] = sum_[k] + d;
      inv_sum_[k + 1] = inv_sum_[k] + 1.0 / d;
    }
  }

  static DemandCurve from_population(const Population& pop) {
    std::vector<double> d;
    d.reserve(pop.size());
    for (const auto& u : pop) d.push_back(u.demand());
    return DemandCurve(d);
  }

  std::size_t size() const noexcept { return sorted_.size(); }
  double total() const noexcept { return sum_.empty() ? 0.0 : sum_.back(); }
  std::span<const double> sorted_demands() const noexcept { return sorted_; }
  /// Original index of the k-th smallest demand.
  std::size_t original_index(std::size_t k) const { return order_[k]; }

  /// Sum of d and of 1/d over the k smallest demands.
  double prefix_sum(std::size_t k) const { return sum_.at(k); }
  double prefix_inv_sum(std::size_t k) const { return inv_sum_.at(k); }

  /// Sorted position of the first throttled user (size() when H is empty).
  std::size_t first_throttled(double threshold, double rate) const {
    const double m = std::max(threshold, rate);
    return static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), m) - sorted_.begin());
  }

  double consumption(double threshold, double rate) const {
    const std::size_t k = first_throttled(threshold, rate);
    return consumption_with_split(k, threshold, rate);
  }

  /// Throttled users as original indices, ascending.
  std::vector<std::size_t> throttled(double threshold, double rate) const {
    std::vector<std::size_t> out;
    for (std::size_t k = first_throttled(threshold, rate); k < size(); ++k) out.push_back(order_[k]);
    std::sort(out.begin(), out.end());
    return out;
  }

  CapacitySolution threshold_for_rate(double capacity, double rate) const {
    if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
    if (capacity >= total()) return {SolveStatus::Unconstrained, kUnlimited, 0};
    if (consumption(0.0, rate) > capacity) return {SolveStatus::Infeasible, 0.0, 0};
    const std::size_t base = first_throttled(0.0, rate);
    auto solve = [&](double start) {
      const std::size_t k = first_throttled(start, rate);
      const double h = static_cast<double>(size() - k);
      const double s = inv_sum_.back() - inv_sum_[k];
      return (capacity - sum_[k] - rate * h) / (h - rate * s);
    };
    return {SolveStatus::Solved, segment_root(base, 0.0, [&](double t) { return consumption(t, rate); }, solve, capacity), 0};
  }

  CapacitySolution rate_for_threshold(double capacity, double threshold) const {
    if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
    if (capacity >= total()) return {SolveStatus::Unconstrained, kUnlimited, 0};
    if (consumption(threshold, 0.0) > capacity) return {SolveStatus::Infeasible, 0.0, 0};
    const std::size_t base = first_throttled(threshold, 0.0);
    auto solve = [&](double start) {
      const std::size_t k = first_throttled(threshold, start);
      const double h = static_cast<double>(size() - k);
      const double s = inv_sum_.back() - inv_sum_[k];
      return (capacity - sum_[k] - h * threshold) / (h - threshold * s);
    };
    return {SolveStatus::Solved, segment_root(base, 0.0, [&](double r) { return consumption(threshold, r); }, solve, capacity), 0};
  }

  /// T_hat, or +inf when capacity covers every demand.
  double max_threshold(double capacity) const {
    auto sol = threshold_for_rate(capacity, 0.0);
    return sol.solved() ? sol.value : kUnlimited;
  }

 private:
  double consumption_with_split(std::size_t k, double threshold, double rate) const {
    const double h = static_cast<double>(size() - k);
    const double s = inv_sum_.back() - inv_sum_[k];
    return sum_[k] + h * threshold + rate * (h - threshold * s);
  }

  // Breakpoints are 0 followed by sorted_[base..n). Finds the last breakpoint
  // whose consumption is <= capacity and solves the linear piece after it.
  template <class Eval, class Solve>
  double segment_root(std::size_t base, double origin, Eval eval, Solve solve, double capacity) const {
    const std::size_t m = size() - base;
    auto point = [&](std::size_t s) { return s == 0 ? origin : sorted_[base + s - 1]; };
    std::size_t lo = 0, hi = m;  // eval(point(lo)) <= C < eval(point(hi))
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (eval(point(mid)) <= capacity)
        lo = mid;
      else
        hi = mid;
    }
    const double x = solve(point(lo));
    return std::clamp(x, point(lo), point(hi));
  }

  std::vector<double> sorted_;
  std::vector<std::size_t> order_;
  std::vector<double> sum_;
  std::vector<double> inv_sum_;
};

}  // namespace throttle
