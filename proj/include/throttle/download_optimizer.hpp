#pragma once

// Regret minimization for file-download populations.
//
// As T sweeps [0, T_hat] the throttled set H only changes at kick points:
// a user kicks in when r(T) drops below its demand and kicks out when T
// reaches its demand. Between kick points H is fixed and, for rho == tau >= 2,
// the aggregate regret is convex in T with its stationary point at the
// smaller root of
//
//     (C - sum_L d) - 2 h T + (sum_H 1/d) T^2 = 0,
//
// which is also where r(T) == T. The optimizer evaluates that root on every
// interval (clamped to the interval) and keeps the global best.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "throttle/allocation.hpp"
#include "throttle/errors.hpp"
#include "throttle/population.hpp"
#include "throttle/regret.hpp"

namespace throttle {

struct KickEvent {
  enum class Kind { KickIn, KickOut };

  double t = 0.0;
  Kind kind = Kind::KickIn;
  std::size_t user = 0;

  friend bool operator<(const KickEvent& a, const KickEvent& b) {
    return std::tie(a.t, a.kind, a.user) < std::tie(b.t, b.kind, b.user);
  }
};

struct IntervalResult {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> throttled;  // population indices, ascending
  double local_threshold = 0.0;
  double local_rate = 0.0;
  double local_regret = 0.0;
  bool interior = false;  // stationary point inside the interval
};

struct DownloadSolution {
  Plan plan = Plan::unlimited(Mode::Download);
  double regret = 0.0;
  std::vector<IntervalResult> intervals;

  bool throttles() const noexcept { return !plan.is_unlimited(); }
};

/// Smaller root of the interval stationarity condition, given the aggregates
/// of a fixed throttled set: h = |H|, inv_sum = sum_H 1/d, low_sum = sum_L d.
/// Empty when the discriminant is negative (no interior stationary point).
inline std::optional<double> interval_minimizer(double h, double inv_sum, double low_sum,
                                                double capacity) {
  if (!(h > 0.0) || !(inv_sum > 0.0)) throw ValidationError("throttled set must be nonempty");
  const double disc = h * h - (capacity - low_sum) * inv_sum;
  if (disc < 0.0) return std::nullopt;
  return (h - std::sqrt(disc)) / inv_sum;
}

inline std::optional<double> interval_minimizer(std::span<const double> throttled_demands,
                                                std::span<const double> low_demands, double capacity) {
  double inv_sum = 0.0, low_sum = 0.0;
  for (double d : throttled_demands) inv_sum += 1.0 / d;
  for (double d : low_demands) low_sum += d;
  return interval_minimizer(static_cast<double>(throttled_demands.size()), inv_sum, low_sum, capacity);
}

namespace detail {

/// Regret and rate on an interval where H (sorted positions [k, n)) is fixed.
class FixedSetRegret {
 public:
  FixedSetRegret(const DemandCurve& curve, std::size_t first, double capacity, double rho)
      : curve_(curve), first_(first), capacity_(capacity), rho_(rho) {
    const std::size_t n = curve.size();
    h_ = static_cast<double>(n - first);
    low_sum_ = curve.prefix_sum(first);
    inv_sum_ = curve.prefix_inv_sum(n) - curve.prefix_inv_sum(first);
  }

  double h() const { return h_; }
  double inv_sum() const { return inv_sum_; }
  double low_sum() const { return low_sum_; }

  double rate(double t) const { return (capacity_ - low_sum_ - h_ * t) / (h_ - t * inv_sum_); }

  double regret(double t) const { return regret(t, rate(t)); }

  double regret(double t, double r) const {
    double total = 0.0;
    auto d = curve_.sorted_demands();
    for (std::size_t k = first_; k < d.size(); ++k) {
      const double term = std::max(0.0, 1.0 - r / d[k]) * std::max(0.0, 1.0 - t / d[k]);
      total += power(term, rho_);
    }
    return total;
  }

 private:
  const DemandCurve& curve_;
  std::size_t first_;
  double capacity_;
  double rho_;
  double h_ = 0.0;
  double inv_sum_ = 0.0;
  double low_sum_ = 0.0;
};

inline std::vector<KickEvent> kick_points(const DemandCurve& curve, double capacity) {
  std::vector<KickEvent> events;
  const double t_hat = curve.max_threshold(capacity);
  if (std::isinf(t_hat)) return events;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const double d = curve.sorted_demands()[k];
    const std::size_t user = curve.original_index(k);
    auto in = curve.threshold_for_rate(capacity, d);
    if (in.solved() && in.value < std::min(t_hat, d)) events.push_back({in.value, KickEvent::Kind::KickIn, user});
    if (d < t_hat) events.push_back({d, KickEvent::Kind::KickOut, user});
  }
  std::sort(events.begin(), events.end());
  return events;
}

// Ties prefer the stationary point (r == T), then the smaller T. Exact ties
// happen when a single user is throttled and regret is flat in T.
inline bool better(double regret, double t, bool stationary, double best_regret, double best_t,
                   bool best_stationary) {
  const double tol = 1e-12 * std::max(1.0, best_regret);
  if (regret < best_regret - tol) return true;
  if (regret > best_regret + tol) return false;
  if (stationary != best_stationary) return stationary;
  return t < best_t;
}

}  // namespace detail

/// Kick-in and kick-out thresholds, sorted by (t, kind, user).
inline std::vector<KickEvent> kick_points(const Population& pop, double capacity) {
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");
  return detail::kick_points(DemandCurve::from_population(pop), capacity);
}

inline DownloadSolution optimize_download(const Population& pop, double capacity, const RegretParams& params) {
  params.require_download_form();
  if (!(capacity > 0.0)) throw ValidationError("capacity must be positive");

  DownloadSolution out;
  const DemandCurve curve = DemandCurve::from_population(pop);
  if (capacity >= curve.total()) return out;

  const double t_hat = curve.max_threshold(capacity);
  std::vector<double> cuts{0.0, t_hat};
  for (const auto& e : detail::kick_points(curve, capacity))
    if (e.t > 0.0 && e.t < t_hat) cuts.push_back(e.t);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double best_t = kUnlimited, best_r = 0.0, best_regret = kUnlimited;
  bool best_stationary = false;
  auto consider = [&](double t, double r, double regret, bool stationary) {
    if (detail::better(regret, t, stationary, best_regret, best_t, best_stationary)) {
      best_t = t;
      best_r = r;
      best_regret = regret;
      best_stationary = stationary;
    }
  };

  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double a = cuts[s], b = cuts[s + 1];
    const double mid = 0.5 * (a + b);
    const double r_mid = curve.rate_for_threshold(capacity, mid).value;
    const std::size_t first = curve.first_throttled(mid, r_mid);
    const detail::FixedSetRegret f(curve, first, capacity, params.rho);

    IntervalResult iv;
    iv.lo = a;
    iv.hi = b;
    for (std::size_t k = first; k < curve.size(); ++k) iv.throttled.push_back(curve.original_index(k));
    std::sort(iv.throttled.begin(), iv.throttled.end());

    auto root = interval_minimizer(f.h(), f.inv_sum(), f.low_sum(), capacity);
    if (root && *root >= a && *root < b) {
      iv.interior = true;
      iv.local_threshold = *root;
      iv.local_rate = *root;  // r == T at the stationary point
      iv.local_regret = f.regret(*root, *root);
    } else {
      // Regret falls while r(T) > T and rises once r(T) < T.
      double t = r_mid > mid ? b : a;
      const double other = t == b ? a : b;
      if (f.regret(other) < f.regret(t) - 1e-12 * std::max(1.0, f.regret(t))) t = other;
      iv.local_threshold = t;
      iv.local_rate = std::max(0.0, f.rate(t));
      iv.local_regret = f.regret(t);
    }
    consider(iv.local_threshold, iv.local_rate, iv.local_regret, iv.interior);
    out.intervals.push_back(std::move(iv));
  }

  // Closing endpoint T = T_hat, where r = 0.
  {
    const std::size_t first = curve.first_throttled(t_hat, 0.0);
    const detail::FixedSetRegret f(curve, first, capacity, params.rho);
    consider(t_hat, 0.0, f.regret(t_hat, 0.0), false);
  }

  out.plan = Plan{best_t, best_r, Mode::Download};
  out.regret = best_regret;
  return out;
}

/// Brute-force reference: scans T on a uniform grid over [0, T_hat], solving
/// the rate by bisection on the full population at every point.
inline DownloadSolution grid_oracle(const Population& pop, double capacity, const RegretParams& params,
                                    double step) {
  if (!(step > 0.0)) throw ValidationError("grid step must be positive");
  DownloadSolution out;
  if (capacity >= pop.total_demand()) return out;
  const double t_hat = max_threshold(pop, capacity, Mode::Download).t_hat;

  double best_t = 0.0, best_r = 0.0, best_regret = kUnlimited;
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * step;
    if (t > t_hat) break;
    auto r = rate_for_threshold(pop, capacity, t, Mode::Download, 1e-12);
    if (!r.solved()) continue;
    const double regret = aggregate_regret(pop, Plan{t, r.value, Mode::Download}, params);
    if (regret < best_regret) {
      best_t = t;
      best_r = r.value;
      best_regret = regret;
    }
  }
  out.plan = Plan{best_t, best_r, Mode::Download};
  out.regret = best_regret;
  return out;
}

}  // namespace throttle
