// Randomized property checks over the allocation, regret and optimizer modules.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "throttle/cycle_sim.hpp"
#include "throttle/download_optimizer.hpp"
#include "throttle/stream_optimizer.hpp"
#include "throttle/tier_game.hpp"

using namespace throttle;

namespace {

Population random_download_pop(std::mt19937_64& rng, std::size_t n) {
  std::lognormal_distribution<double> rate(0.0, 0.6);
  std::uniform_real_distribution<double> act(0.2, 1.0);
  std::vector<UserProfile> users;
  for (std::size_t i = 0; i < n; ++i) users.push_back({i, rate(rng), act(rng), {}});
  return Population(users);
}

}  // namespace

TEST(Fairness, ThrottledPairsOrderedByDemand) {
  std::mt19937_64 rng(2718);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int checked = 0;
  while (checked < 1000) {
    const double t = 0.05 + 0.9 * u01(rng);
    const double r = 0.05 + 0.9 * u01(rng);
    const double floor = std::max(t, r);
    const double dj = floor + (2.0 - floor) * u01(rng);
    const double di = dj + (2.0 - dj) * u01(rng);
    if (!(di > dj && dj > floor)) continue;
    UserProfile ui{0, di, 1.0, {}}, uj{1, dj, 1.0, {}};
    Plan plan{t, r, Mode::Download};
    ASSERT_TRUE(is_throttled(ui, plan) && is_throttled(uj, plan));
    // B = T + r (1 - T/d) by hand; y = 1 since d > r.
    const double bi = t + r * (1 - t / di);
    EXPECT_NEAR(allocation(ui, plan), bi, 1e-15);
    EXPECT_GT(allocation(ui, plan), allocation(uj, plan));
    EXPECT_GT(user_regret(ui, plan, RegretParams{}), user_regret(uj, plan, RegretParams{}));
    EXPECT_LT(allocation(ui, plan), di);
    ++checked;
  }
}

TEST(OptimalRateEqualsThreshold, RandomInstances) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto pop = random_download_pop(rng, 5 + trial % 40);
    const double cap = std::uniform_real_distribution<double>(0.5, 0.97)(rng) * pop.total_demand();
    auto sol = optimize_download(pop, cap, RegretParams{});
    EXPECT_LE(std::abs(sol.plan.throttle_rate - sol.plan.threshold), 1e-9) << "trial " << trial;
  }
}

TEST(PostThrottleActivity, FormulaGrid) {
  for (double d = 0.05; d <= 2.0; d += 0.05) {
    for (double r = 0.0; r <= 2.0; r += 0.05) {
      UserProfile u{0, d, 1.0, {}};
      const double want = r == 0.0 ? 1.0 : std::min(d / r, 1.0);
      EXPECT_DOUBLE_EQ(post_throttle_activity(u, r, Mode::Download), want);
      UserProfile s{0, d, 0.4, {}};
      EXPECT_DOUBLE_EQ(post_throttle_activity(s, r, Mode::Streaming), 0.4);
    }
  }
}

TEST(CapacityConservation, EveryOptimizerOutput) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    auto pop = random_download_pop(rng, 30);
    const double cap = std::uniform_real_distribution<double>(0.4, 0.99)(rng) * pop.total_demand();
    auto d = optimize_download(pop, cap, RegretParams{});
    EXPECT_LE(std::abs(consumption(pop, d.plan) - cap), 1e-6 * cap);

    std::vector<double> v{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5};
    auto s = optimize_streaming(pop, cap, CodecSet(v), RegretParams{});
    EXPECT_LE(std::abs(consumption(pop, s.plan) - cap), 1e-6 * cap);

    auto seeded = assign_tiers_binomial(pop, static_cast<std::uint64_t>(trial));
    auto a = Assignment::from_population(seeded, 3);
    const auto bounds = ThresholdBounds::demand_range(pop);
    double low = 0.0;
    for (const auto& u : pop) low += allocation(u, bounds.lo, bounds.lo, Mode::Download);
    if (low <= cap) {
      auto m = solve_multi_tier(pop, a, cap, RegretParams{});
      double used = 0.0;
      for (std::size_t j = 0; j < 3; ++j)
        for (auto i : a.members(j)) used += allocation(pop[i], m.thresholds[j], m.thresholds[j], Mode::Download);
      EXPECT_LE(std::abs(used - cap), 1e-6 * cap);
    }
  }
  // Sentinel side of the contract.
  auto pop = random_download_pop(rng, 10);
  EXPECT_FALSE(optimize_download(pop, pop.total_demand() * 1.01, RegretParams{}).throttles());
}

TEST(Diurnal, BoundsOnFullGrid) {
  for (int k = 1; k <= 100; ++k) {
    const double x = k / 100.0;
    for (int h = 0; h < 24; ++h) {
      const double p = diurnal_activity(x, h);
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
}

TEST(ExponentInvariance, RandomInstances) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    auto pop = random_download_pop(rng, 25);
    const double cap = 0.8 * pop.total_demand();
    const double t2 = optimize_download(pop, cap, RegretParams::symmetric(2)).plan.threshold;
    EXPECT_NEAR(optimize_download(pop, cap, RegretParams::symmetric(3)).plan.threshold, t2, 1e-9);
    EXPECT_NEAR(optimize_download(pop, cap, RegretParams::symmetric(4)).plan.threshold, t2, 1e-9);
  }
}

TEST(OracleDominance, RandomInstances) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 15; ++trial) {
    auto pop = random_download_pop(rng, 12);
    const double cap = 0.8 * pop.total_demand();
    const double t_hat = max_threshold(pop, cap).t_hat;
    auto sol = optimize_download(pop, cap, RegretParams{});
    EXPECT_LE(sol.regret, grid_oracle(pop, cap, RegretParams{}, 1e-3 * t_hat).regret + 1e-6);
  }
}

TEST(SemiConvexity, DerivativeSignFollowsRateVersusThreshold) {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 20; ++trial) {
    auto pop = random_download_pop(rng, 12);
    const double cap = 0.8 * pop.total_demand();
    auto sol = optimize_download(pop, cap, RegretParams{});
    for (const auto& iv : sol.intervals) {
      const double w = iv.hi - iv.lo;
      if (w < 1e-6) continue;
      for (int k = 1; k < 20; ++k) {
        const double t = iv.lo + w * k / 20.0, dt = w * 1e-4;
        auto r = rate_for_threshold(pop, cap, t, Mode::Download, 1e-13).value;
        const double f0 = aggregate_regret(pop, Plan{t, r, Mode::Download}, RegretParams{});
        const double r1 = rate_for_threshold(pop, cap, t + dt, Mode::Download, 1e-13).value;
        const double f1 = aggregate_regret(pop, Plan{t + dt, r1, Mode::Download}, RegretParams{});
        const double margin = 1e-3 * std::max(1.0, t);
        if (r > t + margin) { EXPECT_LE(f1 - f0, 1e-12) << "t " << t; }
        if (r < t - margin) { EXPECT_GE(f1 - f0, -1e-12) << "t " << t; }
      }
    }
  }
}

TEST(Determinism, GeneratorsAndSimulation) {
  EXPECT_EQ(generate_lognormal(300, 1.0, 0.25, 77), generate_lognormal(300, 1.0, 0.25, 77));
  std::vector<double> v{0.2, 0.4};
  auto g = percent_activity_grid();
  EXPECT_EQ(generate_codec_uniform(300, v, g, 77), generate_codec_uniform(300, v, g, 77));
  auto pop = generate_codec_uniform(100, v, g, 1);
  SimConfig cfg;
  cfg.plan = Plan{0.1, 0.2, Mode::Streaming};
  EXPECT_EQ(simulate(pop, cfg).hourly_total, simulate(pop, cfg).hourly_total);
}
