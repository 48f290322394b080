#pragma once

// Hourly Monte Carlo simulation of staggered 30-day billing cycles.
//
// Every user gets a uniformly random cycle start day. Each hour a user is
// either off, on at its full rate R_i, or on at the throttled rate once its
// consumption since the cycle start has reached T. Rates are per cycle, so an
// active hour consumes rate / (days_per_cycle * hours_per_day).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "throttle/allocation.hpp"
#include "throttle/errors.hpp"
#include "throttle/population.hpp"

namespace throttle {

enum class UserState : std::uint8_t { Inactive, Unthrottled, Throttled };

struct SimConfig {
  int days_per_cycle = 30;
  int hours_per_day = 24;
  int horizon_days = 60;
  bool diurnal = false;
  std::uint64_t seed = 1;
  Plan plan = Plan::unlimited(Mode::Streaming);
  double capacity = 0.0;  // output normalization; 0 means total demand
  bool record_states = false;

  int hours_per_cycle() const { return days_per_cycle * hours_per_day; }
};

struct CycleTrace {
  std::vector<double> hourly_total;
  std::vector<double> normalized_total;  // hourly_total / (C / hours_per_cycle)
  std::vector<UserState> states;         // hour-major, users() per hour; empty unless recorded
  std::vector<int> start_day;            // per user
  std::size_t user_count = 0;
  int hours_per_day = 24;
  int hours_per_cycle = 720;

  std::size_t hours() const noexcept { return hourly_total.size(); }
  UserState state(std::size_t hour, std::size_t user) const { return states.at(hour * user_count + user); }
};

/// Probability that a user with mean activity x is on during the given hour
/// of the day: a 24-hour sine with its midpoint at 10:00.
inline double diurnal_activity(double x, int hour_of_day) {
  if (!(x > 0.0 && x <= 1.0)) throw ValidationError("activity must lie in (0, 1]");
  const double amplitude = 0.5 * std::min(x, 1.0 - x);
  return amplitude * std::sin(2.0 * std::numbers::pi / 24.0 * (hour_of_day - 10)) + x;
}

namespace detail {

/// Per-user generator seeded from (seed, user), so each user's stream does
/// not depend on how many users precede it.
inline std::mt19937_64 user_rng(std::uint64_t seed, std::size_t user) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(std::uint64_t{user} >> 32)};
  return std::mt19937_64(seq);
}

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Runs the simulation. One full cycle is simulated as burn-in before hour 0
/// so that every user enters the recorded window mid-cycle with a consistent
/// accumulator.
inline CycleTrace simulate(const Population& pop, const SimConfig& config) {
  if (config.days_per_cycle <= 0 || config.hours_per_day <= 0)
    throw ValidationError("cycle length must be positive");
  if (config.horizon_days <= 0) throw ValidationError("horizon must be positive");
  const int cycle = config.hours_per_cycle();
  const std::size_t hours = static_cast<std::size_t>(config.horizon_days) * config.hours_per_day;
  const std::size_t n = pop.size();

  CycleTrace trace;
  trace.user_count = n;
  trace.hours_per_day = config.hours_per_day;
  trace.hours_per_cycle = cycle;
  trace.hourly_total.assign(hours, 0.0);
  trace.start_day.resize(n);
  if (config.record_states) trace.states.assign(hours * n, UserState::Inactive);

  const Plan& plan = config.plan;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = pop[i];
    auto rng = detail::user_rng(config.seed, i);
    const int start = static_cast<int>(rng() % static_cast<std::uint64_t>(config.days_per_cycle));
    trace.start_day[i] = start;

    const double full = u.rate / cycle;
    const double throttled_rate = std::min(u.rate, plan.throttle_rate);
    const double slow = throttled_rate / cycle;
    const bool can_throttle = !plan.is_unlimited() && plan.throttle_rate < u.rate;
    double boosted = u.activity;
    if (plan.mode == Mode::Download && can_throttle) boosted = post_throttle_activity(u, plan.throttle_rate, plan.mode);

    const int offset = start * config.hours_per_day;  // cycle boundary phase
    double acc = 0.0;
    for (long h = -cycle; h < static_cast<long>(hours); ++h) {
      if (((h - offset) % cycle + cycle) % cycle == 0) acc = 0.0;
      const bool over = can_throttle && acc >= plan.threshold;
      const int hod = static_cast<int>(((h % config.hours_per_day) + config.hours_per_day) % config.hours_per_day);
      double p = over ? boosted : u.activity;
      if (config.diurnal) p = diurnal_activity(p, hod);
      const double draw = detail::unit_uniform(rng);
      UserState state = UserState::Inactive;
      double used = 0.0;
      if (draw < p) {
        state = over ? UserState::Throttled : UserState::Unthrottled;
        used = over ? slow : full;
      }
      acc += used;
      if (h < 0) continue;
      trace.hourly_total[static_cast<std::size_t>(h)] += used;
      if (config.record_states) trace.states[static_cast<std::size_t>(h) * n + i] = state;
    }
  }

  const double cap = config.capacity > 0.0 ? config.capacity : pop.total_demand();
  const double unit = cap / cycle;
  trace.normalized_total.reserve(hours);
  for (double v : trace.hourly_total) trace.normalized_total.push_back(v / unit);
  return trace;
}

struct VariabilityResult {
  double ratio_std = 0.0;
  std::size_t excluded_hours = 0;
};

/// Standard deviation over hours of throttled / unthrottled hourly totals.
/// Hours with zero unthrottled consumption are skipped and counted.
inline VariabilityResult variability_ratio(const CycleTrace& throttled, const CycleTrace& unthrottled) {
  if (throttled.hours() != unthrottled.hours()) throw ValidationError("traces must cover the same horizon");
  std::vector<double> ratios;
  VariabilityResult out;
  for (std::size_t h = 0; h < throttled.hours(); ++h) {
    if (unthrottled.hourly_total[h] > 0.0)
      ratios.push_back(throttled.hourly_total[h] / unthrottled.hourly_total[h]);
    else
      ++out.excluded_hours;
  }
  if (ratios.empty()) return out;
  double mean = 0.0;
  for (double r : ratios) mean += r;
  mean /= static_cast<double>(ratios.size());
  double var = 0.0;
  for (double r : ratios) var += (r - mean) * (r - mean);
  out.ratio_std = std::sqrt(var / static_cast<double>(ratios.size()));
  return out;
}

/// Means of consecutive whole days; a trailing partial day is dropped.
inline std::vector<double> daily_average(const std::vector<double>& hourly, int hours_per_day = 24) {
  if (hours_per_day <= 0) throw ValidationError("hours per day must be positive");
  std::vector<double> out;
  const std::size_t day = static_cast<std::size_t>(hours_per_day);
  for (std::size_t start = 0; start + day <= hourly.size(); start += day) {
    double s = 0.0;
    for (std::size_t h = start; h < start + day; ++h) s += hourly[h];
    out.push_back(s / static_cast<double>(day));
  }
  return out;
}

inline std::vector<double> daily_average(const CycleTrace& trace) {
  return daily_average(trace.hourly_total, trace.hours_per_day);
}

}  // namespace throttle
