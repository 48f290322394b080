#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "throttle/cycle_sim.hpp"
#include "throttle/stream_optimizer.hpp"

using namespace throttle;

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double cv(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size())) / m;
}

Population codec_grid_population(std::size_t n, std::uint64_t seed) {
  std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  auto grid = percent_activity_grid();
  return generate_codec_uniform(n, v, grid, seed);
}

}  // namespace

TEST(Diurnal, Examples) {
  EXPECT_NEAR(diurnal_activity(0.9, 10), 0.9, 1e-15);
  EXPECT_NEAR(diurnal_activity(0.9, 16), 0.95, 1e-12);
  EXPECT_NEAR(diurnal_activity(0.9, 4), 0.85, 1e-12);
  EXPECT_THROW(diurnal_activity(0.0, 3), ValidationError);
  EXPECT_THROW(diurnal_activity(1.2, 3), ValidationError);
}

TEST(Diurnal, DailyMeanIsActivity) {
  for (double x : {0.05, 0.3, 0.5, 0.77, 1.0}) {
    double s = 0.0;
    for (int h = 0; h < 24; ++h) s += diurnal_activity(x, h);
    EXPECT_NEAR(s / 24.0, x, 1e-12);
  }
}

TEST(Simulate, SingleAlwaysOnUserIsFlat) {
  Population pop({{0, 0.9, 1.0, {}}});
  SimConfig cfg;
  cfg.horizon_days = 30;
  auto trace = simulate(pop, cfg);
  ASSERT_EQ(trace.hours(), 720u);
  double total = 0.0;
  for (double v : trace.hourly_total) {
    EXPECT_DOUBLE_EQ(v, 0.9 / 720);
    total += v;
  }
  EXPECT_NEAR(total, 0.9, 1e-12);
  for (double v : trace.normalized_total) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Simulate, Deterministic) {
  auto pop = codec_grid_population(50, 1);
  SimConfig cfg;
  cfg.seed = 9;
  cfg.diurnal = true;
  cfg.plan = Plan{0.3, 0.1, Mode::Streaming};
  cfg.record_states = true;
  auto a = simulate(pop, cfg);
  auto b = simulate(pop, cfg);
  EXPECT_EQ(a.hourly_total, b.hourly_total);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.start_day, b.start_day);
  cfg.seed = 10;
  EXPECT_NE(simulate(pop, cfg).hourly_total, a.hourly_total);
}

TEST(Simulate, StartDaysInRange) {
  auto pop = codec_grid_population(3000, 2);
  auto trace = simulate(pop, SimConfig{});
  std::vector<int> counts(30, 0);
  for (int d : trace.start_day) {
    ASSERT_GE(d, 0);
    ASSERT_LT(d, 30);
    ++counts[static_cast<std::size_t>(d)];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += std::pow(c - 100.0, 2) / 100.0;
  EXPECT_LT(chi2, 49.588);  // chi-square(29) upper 1% point
}

TEST(Simulate, AccountingMatchesStates) {
  auto pop = codec_grid_population(40, 3);
  SimConfig cfg;
  cfg.plan = Plan{0.3, 0.1, Mode::Streaming};
  cfg.record_states = true;
  cfg.diurnal = true;
  auto trace = simulate(pop, cfg);
  for (std::size_t h = 0; h < trace.hours(); ++h) {
    double s = 0.0;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      switch (trace.state(h, i)) {
        case UserState::Unthrottled: s += pop[i].rate / 720; break;
        case UserState::Throttled: s += std::min(pop[i].rate, 0.1) / 720; break;
        case UserState::Inactive: break;
      }
    }
    EXPECT_NEAR(trace.hourly_total[h], s, 1e-12);
  }
}

TEST(Simulate, ThrottlingStartsOnceAccumulatorReachesThreshold) {
  Population pop({{0, 0.9, 0.9, {}}, {1, 0.9, 0.97, {}}});
  SimConfig cfg;
  cfg.plan = Plan{0.3, 0.1, Mode::Streaming};
  cfg.record_states = true;
  cfg.horizon_days = 300;
  cfg.seed = 5;
  auto trace = simulate(pop, cfg);
  std::vector<double> throttled_hours(2, 0.0);
  for (std::size_t i = 0; i < 2; ++i) {
    int cycles = 0;
    for (std::size_t c0 = static_cast<std::size_t>(trace.start_day[i]) * 24; c0 + 720 <= trace.hours(); c0 += 720) {
      double acc = 0.0;
      bool throttled = false;
      for (std::size_t h = c0; h < c0 + 720; ++h) {
        const auto st = trace.state(h, i);
        if (st == UserState::Unthrottled) {
          EXPECT_LT(acc, 0.3);
          acc += 0.9 / 720;
        } else if (st == UserState::Throttled) {
          EXPECT_GE(acc, 0.3);
          acc += 0.1 / 720;
          throttled = true;
          throttled_hours[i] += 1.0;
        }
      }
      EXPECT_TRUE(throttled) << "user " << i << " cycle at hour " << c0;
      ++cycles;
    }
    EXPECT_GE(cycles, 8);
  }
  // Higher activity reaches T sooner, so it spends longer throttled.
  EXPECT_GT(throttled_hours[1], throttled_hours[0]);
}

TEST(Simulate, UnthrottledMonthlyMeanIsDemand) {
  Population pop({{0, 0.8, 0.3, {}}, {1, 0.5, 0.7, {}}});
  std::vector<double> month0, month1;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.horizon_days = 30;
    cfg.record_states = true;
    auto trace = simulate(pop, cfg);
    double u0 = 0.0, u1 = 0.0;
    for (std::size_t h = 0; h < trace.hours(); ++h) {
      // Positions follow rate order: 0 is the 0.5 user.
      if (trace.state(h, 1) == UserState::Unthrottled) u0 += 0.8 / 720;
      if (trace.state(h, 0) == UserState::Unthrottled) u1 += 0.5 / 720;
    }
    month0.push_back(u0);
    month1.push_back(u1);
  }
  // Binomial: 720 hours, p = x, each worth R/720.
  auto se = [](double r, double x) { return r / 720 * std::sqrt(720 * x * (1 - x)) / std::sqrt(200.0); };
  EXPECT_NEAR(mean(month0), 0.8 * 0.3, 3 * se(0.8, 0.3));
  EXPECT_NEAR(mean(month1), 0.5 * 0.7, 3 * se(0.5, 0.7));
}

TEST(Simulate, DownloadUsersRaiseActivityAfterThrottling) {
  // d = 0.5, r = 0.25: y = min(d / r, 1) = 1, so throttled hours are always active.
  Population pop({{0, 1.0, 0.5, {}}});
  SimConfig cfg;
  cfg.plan = Plan{0.1, 0.25, Mode::Download};
  cfg.record_states = true;
  cfg.horizon_days = 120;
  auto trace = simulate(pop, cfg);
  bool any = false;
  for (std::size_t h = 0; h < trace.hours(); ++h) {
    if (trace.state(h, 0) == UserState::Throttled) any = true;
    if (h > 0 && trace.state(h - 1, 0) == UserState::Throttled) {
      // Next hour is either still throttled or a new cycle started.
      const long into = (static_cast<long>(h) - trace.start_day[0] * 24) % 720;
      if (into != 0) { EXPECT_EQ(trace.state(h, 0), UserState::Throttled); }
    }
  }
  EXPECT_TRUE(any);
}

TEST(Simulate, UsersAtOrBelowRateNeverThrottle) {
  Population pop({{0, 0.1, 1.0, {}}});
  SimConfig cfg;
  cfg.plan = Plan{0.01, 0.1, Mode::Streaming};
  cfg.record_states = true;
  auto trace = simulate(pop, cfg);
  for (std::size_t h = 0; h < trace.hours(); ++h) EXPECT_NE(trace.state(h, 0), UserState::Throttled);
}

TEST(Simulate, ConfigValidation) {
  Population pop({{0, 1.0, 1.0, {}}});
  SimConfig cfg;
  cfg.horizon_days = 0;
  EXPECT_THROW(simulate(pop, cfg), ValidationError);
  cfg = SimConfig{};
  cfg.days_per_cycle = 0;
  EXPECT_THROW(simulate(pop, cfg), ValidationError);
}

TEST(Variability, IdenticalTracesGiveZero) {
  auto pop = codec_grid_population(30, 4);
  auto t = simulate(pop, SimConfig{});
  auto v = variability_ratio(t, t);
  EXPECT_EQ(v.ratio_std, 0.0);
  EXPECT_EQ(v.excluded_hours, 0u);
}

TEST(Variability, ExcludesZeroHoursAndUsesPopulationStd) {
  CycleTrace a, b;
  a.hourly_total = {1.0, 2.0, 5.0, 3.0};
  b.hourly_total = {1.0, 1.0, 0.0, 1.0};
  auto v = variability_ratio(a, b);
  EXPECT_EQ(v.excluded_hours, 1u);
  // ratios 1, 2, 3: mean 2, population variance 2/3
  EXPECT_NEAR(v.ratio_std, std::sqrt(2.0 / 3.0), 1e-15);
  CycleTrace c;
  c.hourly_total = {1.0};
  EXPECT_THROW(variability_ratio(a, c), ValidationError);
}

TEST(Variability, SmallPopulationBelowTwelvePercent) {
  auto pop = codec_grid_population(30, 42);
  SimConfig cfg;
  cfg.diurnal = true;
  cfg.seed = 42;
  auto un = simulate(pop, cfg);
  cfg.plan = Plan{0.3, 0.1, Mode::Streaming};
  auto th = simulate(pop, cfg);
  EXPECT_LT(variability_ratio(th, un).ratio_std, 0.12);
}

TEST(DailyAverage, Basics) {
  std::vector<double> flat(24 * 3 + 5, 2.5);
  auto d = daily_average(flat);
  ASSERT_EQ(d.size(), 3u);
  for (double v : d) EXPECT_DOUBLE_EQ(v, 2.5);

  std::vector<double> wave;
  for (int h = 0; h < 48; ++h) wave.push_back(1.0 + std::sin(2 * std::numbers::pi * h / 24.0));
  for (double v : daily_average(wave)) EXPECT_NEAR(v, 1.0, 1e-12);
  EXPECT_TRUE(daily_average(std::vector<double>(10, 1.0)).empty());
  EXPECT_THROW(daily_average(flat, 0), ValidationError);
}

TEST(DailyAverage, ThrottledRunTracksScaledUnthrottled) {
  auto pop = codec_grid_population(10000, 7);
  const double cap = 0.8 * pop.total_demand();
  auto t = solve_threshold(pop, cap, 0.1, 1e-12);
  ASSERT_TRUE(t.solved());
  SimConfig cfg;
  cfg.diurnal = true;
  cfg.seed = 7;
  cfg.capacity = cap;
  auto un = simulate(pop, cfg);
  cfg.plan = Plan{t.value, 0.1, Mode::Streaming};
  auto th = simulate(pop, cfg);
  auto du = daily_average(un), dt = daily_average(th);
  ASSERT_EQ(du.size(), dt.size());
  const double scale = cap / pop.total_demand();
  for (std::size_t k = 0; k < du.size(); ++k) EXPECT_NEAR(dt[k], du[k] * scale, 0.05 * du[k] * scale) << "day " << k;
}

TEST(Staggering, RelativeSpreadShrinksWithPopulation) {
  double prev = kUnlimited;
  for (std::size_t n : {100, 1000, 10000}) {
    auto pop = codec_grid_population(n, 11);
    SimConfig cfg;
    cfg.seed = 11;
    cfg.plan = Plan{0.3, 0.1, Mode::Streaming};
    auto trace = simulate(pop, cfg);
    const double c = cv(trace.hourly_total);
    EXPECT_LE(c, prev);
    prev = c;
  }
}
