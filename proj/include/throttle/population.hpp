#pragma once

// Subscriber populations: construction, seeded generators and CSV persistence.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_set>
#include <vector>

#include "throttle/errors.hpp"

namespace throttle {

struct UserProfile {
  std::size_t id = 0;
  double rate = 0.0;      // desired rate R_i, bits per cycle
  double activity = 1.0;  // pre-throttle active fraction x_i in (0, 1]
  std::optional<std::size_t> tier;  // 0-based

  double demand() const noexcept { return rate * activity; }

  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

inline void validate(const UserProfile& u) {
  if (!(u.rate > 0.0) || !std::isfinite(u.rate))
    throw ValidationError("user " + std::to_string(u.id) + ": rate must be positive and finite");
  if (!(u.activity > 0.0 && u.activity <= 1.0))
    throw ValidationError("user " + std::to_string(u.id) + ": activity must lie in (0, 1]");
}

/// Nonempty set of users kept in ascending rate order. Positions in this order
/// are the user indices used by every other module.
class Population {
 public:
  Population() = default;

  explicit Population(std::vector<UserProfile> users) : users_(std::move(users)) {
    if (users_.empty()) throw ValidationError("population must not be empty");
    std::unordered_set<std::size_t> seen;
    for (const auto& u : users_) {
      validate(u);
      if (!seen.insert(u.id).second)
        throw ValidationError("duplicate user id " + std::to_string(u.id));
    }
    std::stable_sort(users_.begin(), users_.end(),
                     [](const UserProfile& a, const UserProfile& b) { return a.rate < b.rate; });
  }

  std::size_t size() const noexcept { return users_.size(); }
  bool empty() const noexcept { return users_.empty(); }
  const UserProfile& operator[](std::size_t i) const { return users_[i]; }
  std::span<const UserProfile> users() const noexcept { return users_; }
  auto begin() const noexcept { return users_.begin(); }
  auto end() const noexcept { return users_.end(); }

  double total_demand() const noexcept {
    double s = 0.0;
    for (const auto& u : users_) s += u.demand();
    return s;
  }

  /// Sub-population made of the users at the given positions.
  Population subset(std::span<const std::size_t> positions) const {
    std::vector<UserProfile> out;
    out.reserve(positions.size());
    for (auto p : positions) out.push_back(users_.at(p));
    return Population(std::move(out));
  }

  friend bool operator==(const Population&, const Population&) = default;

 private:
  std::vector<UserProfile> users_;
};

// ---------------------------------------------------------------------------
// Generators

inline Population generate_lognormal(std::size_t n, double mu, double sigma, std::uint64_t seed,
                                      double activity = 1.0) {
  if (n == 0) throw ValidationError("population must not be empty (n = 0)");
  if (!(sigma > 0.0)) throw ValidationError("lognormal sigma must be positive");
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> dist(mu, sigma);
  std::vector<UserProfile> users(n);
  for (std::size_t i = 0; i < n; ++i) users[i] = UserProfile{i, dist(rng), activity, std::nullopt};
  return Population(std::move(users));
}

/// The activity grid {0.01, 0.02, ..., 1.00}.
inline std::vector<double> percent_activity_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 100; ++k) grid.push_back(k / 100.0);
  return grid;
}

inline Population generate_codec_uniform(std::size_t n, std::span<const double> codecs,
                                         std::span<const double> activity_grid, std::uint64_t seed) {
  if (n == 0) throw ValidationError("population must not be empty (n = 0)");
  if (codecs.empty()) throw ValidationError("codec set must not be empty");
  if (activity_grid.empty()) throw ValidationError("activity grid must not be empty");
  for (double v : codecs)
    if (!(v > 0.0)) throw ValidationError("user rates drawn from codecs must be positive");
  for (double x : activity_grid)
    if (!(x > 0.0 && x <= 1.0)) throw ValidationError("activity grid values must lie in (0, 1]");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_rate(0, codecs.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_activity(0, activity_grid.size() - 1);
  std::vector<UserProfile> users(n);
  for (std::size_t i = 0; i < n; ++i) {
    double rate = codecs[pick_rate(rng)];
    double activity = activity_grid[pick_activity(rng)];
    users[i] = UserProfile{i, rate, activity, std::nullopt};
  }
  return Population(std::move(users));
}

/// Per-user probability of "heads" in the binomial tier seeding, by rate third.
inline double binomial_heads_probability(std::size_t position, std::size_t n) {
  // Remainder users join the lowest third.
  std::size_t third = n / 3;
  std::size_t lower = n - 2 * third;
  if (position < lower) return 0.2;
  if (position < lower + third) return 0.5;
  return 0.8;
}

/// Seeds tier membership: n_tiers - 1 coin flips per user (two for the usual
/// three tiers), tier = number of heads. Low-rate users flip a coin biased
/// toward tails, so they start out in cheaper tiers.
inline Population assign_tiers_binomial(const Population& pop, std::uint64_t seed,
                                        std::size_t n_tiers = 3) {
  if (n_tiers < 2) throw ValidationError("binomial tier seeding needs at least 2 tiers");
  std::mt19937_64 rng(seed);
  std::vector<UserProfile> users(pop.begin(), pop.end());
  for (std::size_t i = 0; i < users.size(); ++i) {
    std::bernoulli_distribution coin(binomial_heads_probability(i, users.size()));
    std::size_t heads = 0;
    for (std::size_t flip = 0; flip + 1 < n_tiers; ++flip) heads += coin(rng) ? 1 : 0;
    users[i].tier = heads;
  }
  return Population(std::move(users));
}

// ---------------------------------------------------------------------------
// CSV persistence: `id,rate,activity,tier` with an empty tier field allowed.

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace detail

inline void write_population(std::ostream& os, const Population& pop) {
  os << "id,rate,activity,tier\n";
  for (const auto& u : pop) {
    os << u.id << ',' << detail::format_double(u.rate) << ',' << detail::format_double(u.activity)
       << ',';
    if (u.tier) os << *u.tier;
    os << '\n';
  }
}

inline Population read_population(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError(1, "missing header");
  ++line_no;
  if (detail::trim(line) != "id,rate,activity,tier")
    throw ParseError(line_no, "expected header 'id,rate,activity,tier'");

  std::vector<UserProfile> users;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split(line, ',');
    if (fields.size() != 4) throw ParseError(line_no, "expected 4 fields");
    auto id = detail::parse_number<std::size_t>(fields[0]);
    auto rate = detail::parse_number<double>(fields[1]);
    auto activity = detail::parse_number<double>(fields[2]);
    if (!id || !rate || !activity) throw ParseError(line_no, "malformed number");
    std::optional<std::size_t> tier;
    if (!detail::trim(fields[3]).empty()) {
      tier = detail::parse_number<std::size_t>(fields[3]);
      if (!tier) throw ParseError(line_no, "malformed tier index");
    }
    UserProfile u{*id, *rate, *activity, tier};
    try {
      validate(u);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    users.push_back(u);
  }
  return Population(std::move(users));
}

inline void save_population(const Population& pop, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_population(os, pop);
}

inline Population load_population(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_population(is);
}

}  // namespace throttle
