// throttle_cli: generate populations, optimize throttling plans, solve tier
// games and simulate billing cycles. Summaries go to stdout, CSVs to files.
//
// Exit codes: 0 ok, 2 usage or invalid input, 1 anything else.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "throttle/throttle.hpp"

using namespace throttle;

namespace {

constexpr std::uint64_t kDefaultSeed = 1;

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string digest(const Population& pop) {
  std::ostringstream os;
  write_population(os, pop);
  char buf[40];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

// Tiers are 0-based inside the library and 1-based in everything printed.
std::string class_label(const Assignment& a) {
  std::string s;
  for (auto t : a.tier_of) s += std::to_string(t + 1);
  return s;
}

struct Summary {
  std::vector<std::pair<std::string, std::string>> rows;
  void add(const std::string& k, const std::string& v) { rows.emplace_back(k, v); }
  void add(const std::string& k, double v) { add(k, num(v)); }
  void print(std::ostream& os, double elapsed_ms) const {
    for (const auto& [k, v] : rows) os << k << ": " << v << '\n';
    os << "elapsed_ms: " << num(elapsed_ms) << '\n';
  }
};

struct CapacityOpts {
  std::optional<double> capacity;
  std::optional<double> fraction;

  void add(CLI::App* app) {
    auto* c = app->add_option("--capacity", capacity, "Capacity C in bits per cycle");
    auto* f = app->add_option("--capacity-fraction", fraction, "Capacity as a fraction of total demand");
    c->excludes(f);
  }
  std::optional<double> resolve(const Population& pop) const {
    if (capacity) {
      if (!(*capacity > 0.0)) throw ValidationError("--capacity must be positive");
      return *capacity;
    }
    if (fraction) {
      if (!(*fraction > 0.0)) throw ValidationError("--capacity-fraction must be positive");
      return *fraction * pop.total_demand();
    }
    return std::nullopt;
  }
  double require(const Population& pop) const {
    auto c = resolve(pop);
    if (!c) throw ValidationError("one of --capacity or --capacity-fraction is required");
    return *c;
  }
};

Mode parse_mode(const std::string& s) {
  if (s == "download") return Mode::Download;
  if (s == "stream") return Mode::Streaming;
  throw ValidationError("--mode must be stream or download");
}

void describe_population(Summary& s, const Population& pop) {
  s.add("input_digest", digest(pop));
  s.add("users", std::to_string(pop.size()));
  s.add("total_demand", pop.total_demand());
}

void add_plan(Summary& s, const Plan& plan, double regret) {
  if (plan.is_unlimited()) {
    s.add("result", "no throttling needed");
  } else {
    s.add("T", plan.threshold);
    s.add("r", plan.throttle_rate);
  }
  s.add("regret", regret);
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOpts {
  std::string dist;
  std::size_t n = 1000;
  std::uint64_t seed = kDefaultSeed;
  std::string out;
};

std::map<std::string, std::string> parse_kv(const std::string& body) {
  std::map<std::string, std::string> kv;
  std::string key, value, *cur = &key;
  for (char c : body + ",") {
    if (c == '=' && cur == &key) {
      cur = &value;
    } else if (c == ',') {
      if (!key.empty()) kv[key] = value;
      key.clear();
      value.clear();
      cur = &key;
    } else {
      *cur += c;
    }
  }
  return kv;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("bad number for " + what + ": '" + s + "'");
  }
}

Population generate(const GenerateOpts& o) {
  const auto colon = o.dist.find(':');
  const std::string kind = o.dist.substr(0, colon);
  const std::string body = colon == std::string::npos ? "" : o.dist.substr(colon + 1);
  if (kind == "lognormal") {
    auto kv = parse_kv(body);
    for (const auto& [k, v] : kv)
      if (k != "mu" && k != "sigma" && k != "x") throw ValidationError("unknown lognormal parameter '" + k + "'");
    const double mu = kv.count("mu") ? to_double(kv["mu"], "mu") : 1.0;
    const double sigma = kv.count("sigma") ? to_double(kv["sigma"], "sigma") : 0.25;
    const double x = kv.count("x") ? to_double(kv["x"], "x") : 1.0;
    if (!(x > 0.0 && x <= 1.0)) throw ValidationError("activity x must lie in (0, 1]");
    return generate_lognormal(o.n, mu, sigma, o.seed, x);
  }
  if (kind == "codec") {
    if (body.rfind("v=", 0) != 0) throw ValidationError("codec distribution needs v=<rate>,<rate>,...");
    std::vector<double> codecs;
    std::stringstream ss(body.substr(2));
    for (std::string tok; std::getline(ss, tok, ',');) codecs.push_back(to_double(tok, "codec rate"));
    auto grid = percent_activity_grid();
    return generate_codec_uniform(o.n, codecs, grid, o.seed);
  }
  throw ValidationError("--dist must be lognormal:mu=..,sigma=.. or codec:v=..");
}

int run_generate(const GenerateOpts& o, Summary& s) {
  auto pop = generate(o);
  save_population(pop, o.out);
  s.add("seed", std::to_string(o.seed));
  describe_population(s, pop);
  s.add("output", o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// optimize

struct OptimizeOpts {
  std::string pop_path;
  CapacityOpts cap;
  std::string mode = "download";
  double rho = 2.0;
  std::optional<double> tau;
  std::vector<double> codecs;
  std::string out;
  std::size_t curve_points = 201;

  RegretParams params() const { return RegretParams{rho, tau.value_or(rho), 0.0}; }
};

void write_download_csvs(const Population& pop, double capacity, const RegretParams& params,
                         const DownloadSolution& sol, const std::string& prefix, std::size_t points) {
  auto curve = open_out(prefix + "_curve.csv");
  curve << "T,r,regret\n";
  if (sol.throttles()) {
    const double t_hat = max_threshold(pop, capacity, Mode::Download).t_hat;
    const std::size_t k = std::max<std::size_t>(points, 2);
    for (std::size_t i = 0; i < k; ++i) {
      const double t = t_hat * static_cast<double>(i) / static_cast<double>(k - 1);
      auto r = rate_for_threshold(pop, capacity, t, Mode::Download, 1e-12);
      if (!r.solved()) continue;
      curve << num(t) << ',' << num(r.value) << ','
            << num(aggregate_regret(pop, Plan{t, r.value, Mode::Download}, params)) << '\n';
    }
  }
  auto iv = open_out(prefix + "_intervals.csv");
  iv << "lo,hi,throttled,local_T,local_r,local_regret,interior\n";
  for (const auto& x : sol.intervals)
    iv << num(x.lo) << ',' << num(x.hi) << ',' << x.throttled.size() << ',' << num(x.local_threshold) << ','
       << num(x.local_rate) << ',' << num(x.local_regret) << ',' << (x.interior ? 1 : 0) << '\n';
}

void write_stream_csvs(const StreamSolution& sol, const std::string& prefix) {
  auto cand = open_out(prefix + "_candidates.csv");
  cand << "rate,threshold,regret,residual\n";
  for (const auto& c : sol.candidates)
    cand << num(c.rate) << ',' << num(c.threshold) << ',' << num(c.regret) << ',' << num(c.residual) << '\n';
  auto sorted = sol.candidates;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const StreamCandidate& a, const StreamCandidate& b) { return a.threshold < b.threshold; });
  auto curve = open_out(prefix + "_curve.csv");
  curve << "T,r,regret\n";
  for (const auto& c : sorted) curve << num(c.threshold) << ',' << num(c.rate) << ',' << num(c.regret) << '\n';
}

int run_optimize(const OptimizeOpts& o, Summary& s) {
  const Mode mode = parse_mode(o.mode);
  auto pop = load_population(o.pop_path);
  const double capacity = o.cap.require(pop);
  const auto params = o.params();
  describe_population(s, pop);
  s.add("mode", o.mode);
  s.add("capacity", capacity);
  s.add("rho", params.rho);
  s.add("tau", params.tau);
  if (mode == Mode::Download) {
    auto sol = optimize_download(pop, capacity, params);
    add_plan(s, sol.plan, sol.regret);
    s.add("intervals", std::to_string(sol.intervals.size()));
    if (!o.out.empty()) write_download_csvs(pop, capacity, params, sol, o.out, o.curve_points);
  } else {
    if (o.codecs.empty()) throw ValidationError("--codecs is required in stream mode");
    auto sol = optimize_streaming(pop, capacity, CodecSet(o.codecs), params);
    add_plan(s, sol.plan, sol.regret);
    s.add("candidates", std::to_string(sol.candidates.size()));
    if (!o.out.empty()) write_stream_csvs(sol, o.out);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// tiers

struct TierOpts {
  std::string pop_path;
  CapacityOpts cap;
  std::vector<double> prices;
  double kappa = 0.01;
  double rho = 2.0;
  double split_step = 0.01;
  std::size_t max_iters = 100;
  std::uint64_t seed = kDefaultSeed;
  std::string out;

  RegretParams params() const { return RegretParams{rho, rho, kappa}; }
};

// A single tier is plain single-tier optimization.
int run_single_tier(const TierOpts& o, const Population& pop, double capacity, Summary& s) {
  OptimizeOpts opt;
  opt.rho = o.rho;
  auto sol = optimize_download(pop, capacity, opt.params());
  s.add("mode", "download");
  s.add("capacity", capacity);
  s.add("rho", o.rho);
  s.add("tau", o.rho);
  add_plan(s, sol.plan, sol.regret);
  s.add("intervals", std::to_string(sol.intervals.size()));
  return 0;
}

int run_sweep(const TierOpts& o, Summary& s) {
  auto pop = load_population(o.pop_path);
  const double capacity = o.cap.require(pop);
  describe_population(s, pop);
  if (o.prices.size() == 1) return run_single_tier(o, pop, capacity, s);
  if (o.prices.size() != 2) throw ValidationError("sweep needs exactly two --prices");
  if (pop.size() > kEnumerationCap)
    throw ValidationError("sweep enumerates all 2^N assignments and is limited to " +
                          std::to_string(kEnumerationCap) + " users (" + std::to_string(pop.size()) +
                          " given); use 'tiers stackelberg' instead");
  auto rows = sweep_splits(pop, o.prices, o.params(), capacity, o.split_step);
  s.add("capacity", capacity);
  s.add("kappa", o.kappa);
  s.add("splits", std::to_string(rows.size()));
  std::size_t total = 0, with_eq = 0;
  for (const auto& r : rows) {
    total += r.equilibria.size();
    with_eq += r.equilibria.empty() ? 0 : 1;
  }
  s.add("splits_with_equilibria", std::to_string(with_eq));
  s.add("equilibria", std::to_string(total));
  if (!o.out.empty()) {
    auto eq = open_out(o.out + "_equilibria.csv");
    eq << "split,class_id,regret\n";
    auto sm = open_out(o.out + "_summary.csv");
    sm << "split,min,avg,max\n";
    for (const auto& r : rows) {
      for (const auto& e : r.equilibria) eq << num(r.split) << ',' << class_label(e.assignment) << ',' << num(e.regret) << '\n';
      sm << num(r.split) << ',';
      if (r.min_regret) sm << num(*r.min_regret) << ',' << num(*r.avg_regret) << ',' << num(*r.max_regret);
      else sm << ",,";
      sm << '\n';
    }
  }
  return 0;
}

int run_stackelberg(const TierOpts& o, Summary& s) {
  auto pop = load_population(o.pop_path);
  const double capacity = o.cap.require(pop);
  describe_population(s, pop);
  if (o.prices.size() == 1) return run_single_tier(o, pop, capacity, s);
  if (o.prices.size() < 2) throw ValidationError("stackelberg needs at least one price");
  const std::size_t tiers = o.prices.size();
  s.add("seed", std::to_string(o.seed));
  s.add("capacity", capacity);
  s.add("kappa", o.kappa);

  // Tiers from the population file win; otherwise seed them with coin flips.
  bool preset = true;
  for (const auto& u : pop) preset = preset && u.tier && *u.tier < tiers;
  const Assignment init = preset ? Assignment::from_population(pop, tiers)
                                 : Assignment::from_population(assign_tiers_binomial(pop, o.seed, tiers), tiers);
  s.add("initial_tiers", preset ? "population file" : "binomial seeding");
  auto rep = stackelberg_iterate(pop, init, o.prices, capacity, o.params(), o.max_iters);

  s.add("converged", rep.converged ? "yes" : "no");
  s.add("iterations", std::to_string(rep.iterations));
  s.add("monotone_in_rate", is_monotone_in_rate(pop, rep.assignment) ? "yes" : "no");
  s.add("regret", rep.regret);
  for (std::size_t t = 0; t < tiers; ++t) {
    const std::string p = "tier" + std::to_string(t + 1) + "_";
    s.add(p + "users", std::to_string(rep.assignment.members(t).size()));
    s.add(p + "share", rep.capacity_shares[t]);
    s.add(p + "T", rep.tier_plans[t].threshold);
    s.add(p + "r", rep.tier_plans[t].throttle_rate);
  }

  if (!o.out.empty()) {
    auto log = open_out(o.out + "_log.csv");
    log << "iteration,moves,leader_regret";
    for (std::size_t t = 0; t < tiers; ++t) log << ",T" << t + 1;
    log << '\n';
    for (const auto& row : rep.log) {
      log << row.iteration << ',' << row.moves << ',' << num(row.leader_regret);
      for (double x : row.thresholds) log << ',' << num(x);
      log << '\n';
    }
    TierConfig cfg{o.prices, rep.capacity_shares, o.params(), Mode::Download, std::nullopt};
    auto as = open_out(o.out + "_assignment.csv");
    as << "id,rate,tier,regret\n";
    for (std::size_t i = 0; i < pop.size(); ++i)
      as << pop[i].id << ',' << num(pop[i].rate) << ',' << rep.assignment.tier_of[i] + 1 << ','
         << num(current_regret(pop, cfg, rep.assignment, rep.tier_plans, i)) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string pop_path;
  CapacityOpts cap;
  std::vector<double> plan;
  bool optimize = false;
  std::string mode = "download";
  std::vector<double> codecs;
  double rho = 2.0;
  int days = 60;
  bool diurnal = false;
  bool states = false;
  std::uint64_t seed = kDefaultSeed;
  std::string out;
};

void write_trace(const CycleTrace& tr, const std::string& prefix) {
  auto h = open_out(prefix + "_hourly.csv");
  h << "hour,total,normalized_total\n";
  for (std::size_t i = 0; i < tr.hours(); ++i)
    h << i << ',' << num(tr.hourly_total[i]) << ',' << num(tr.normalized_total[i]) << '\n';
  auto d = open_out(prefix + "_daily.csv");
  d << "day,total,normalized_total\n";
  auto raw = daily_average(tr.hourly_total, tr.hours_per_day);
  auto norm = daily_average(tr.normalized_total, tr.hours_per_day);
  for (std::size_t i = 0; i < raw.size(); ++i) d << i << ',' << num(raw[i]) << ',' << num(norm[i]) << '\n';
}

char state_code(UserState s) {
  switch (s) {
    case UserState::Inactive: return '0';
    case UserState::Unthrottled: return '1';
    case UserState::Throttled: return '2';
  }
  return '?';
}

int run_simulate(const SimulateOpts& o, Summary& s) {
  const Mode mode = parse_mode(o.mode);
  if (o.days < 30) throw ValidationError("--days must cover at least one 30-day billing cycle");
  if (o.plan.empty() == !o.optimize) throw ValidationError("give exactly one of --plan T,r or --optimize");
  auto pop = load_population(o.pop_path);
  const auto capacity = o.cap.resolve(pop);
  describe_population(s, pop);
  s.add("seed", std::to_string(o.seed));
  s.add("mode", o.mode);
  s.add("days", std::to_string(o.days));
  s.add("diurnal", o.diurnal ? "on" : "off");

  Plan plan;
  if (o.optimize) {
    if (!capacity) throw ValidationError("--optimize needs --capacity or --capacity-fraction");
    const RegretParams params{o.rho, o.rho, 0.0};
    if (mode == Mode::Download) {
      plan = optimize_download(pop, *capacity, params).plan;
    } else {
      if (o.codecs.empty()) throw ValidationError("--codecs is required in stream mode");
      plan = optimize_streaming(pop, *capacity, CodecSet(o.codecs), params).plan;
    }
  } else {
    if (o.plan.size() != 2) throw ValidationError("--plan takes T,r");
    if (!(o.plan[0] >= 0.0 && o.plan[1] >= 0.0)) throw ValidationError("--plan values must be nonnegative");
    plan = Plan{o.plan[0], o.plan[1], mode};
  }
  if (capacity) s.add("capacity", *capacity);
  if (plan.is_unlimited()) {
    s.add("plan", "unlimited");
  } else {
    s.add("T", plan.threshold);
    s.add("r", plan.throttle_rate);
  }

  SimConfig cfg;
  cfg.horizon_days = o.days;
  cfg.diurnal = o.diurnal;
  cfg.seed = o.seed;
  cfg.capacity = capacity.value_or(0.0);
  cfg.plan = plan;
  cfg.record_states = o.states && !o.out.empty();
  auto throttled = simulate(pop, cfg);
  cfg.plan = Plan::unlimited(mode);
  cfg.record_states = false;
  auto unthrottled = simulate(pop, cfg);

  auto v = variability_ratio(throttled, unthrottled);
  s.add("variability_ratio", v.ratio_std);
  s.add("excluded_hours", std::to_string(v.excluded_hours));

  if (!o.out.empty()) {
    write_trace(throttled, o.out + "_throttled");
    write_trace(unthrottled, o.out + "_unthrottled");
    if (o.states) {
      auto st = open_out(o.out + "_states.csv");
      st << "hour,user,state\n";
      for (std::size_t h = 0; h < throttled.hours(); ++h)
        for (std::size_t i = 0; i < pop.size(); ++i) st << h << ',' << pop[i].id << ',' << state_code(throttled.state(h, i)) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Throttling plan optimizer and billing-cycle simulator"};
  app.require_subcommand(1);

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Write a seeded population CSV");
  g->add_option("--dist", gen.dist, "lognormal:mu=1,sigma=0.25[,x=1] or codec:v=0.2,0.4,...")->required();
  g->add_option("--n", gen.n, "Number of users");
  g->add_option("--seed", gen.seed, "RNG seed (default 1)");
  g->add_option("-o,--out", gen.out, "Output CSV")->required();

  OptimizeOpts opt;
  auto* op = app.add_subcommand("optimize", "Regret-minimizing (T, r) for one tier");
  op->add_option("--pop", opt.pop_path, "Population CSV")->required()->check(CLI::ExistingFile);
  opt.cap.add(op);
  op->add_option("--mode", opt.mode, "stream or download")->capture_default_str();
  op->add_option("--rho", opt.rho, "Rate exponent")->capture_default_str();
  op->add_option("--tau", opt.tau, "Time exponent (defaults to rho)");
  op->add_option("--codecs", opt.codecs, "Codec rates, comma separated")->delimiter(',');
  op->add_option("--curve-points", opt.curve_points, "Grid points in the download regret curve")->capture_default_str();
  op->add_option("-o,--out", opt.out, "Prefix for curve and candidate CSVs");

  TierOpts tier;
  auto* tg = app.add_subcommand("tiers", "Tiered pricing games");
  tg->require_subcommand(1);
  auto add_tier_common = [&](CLI::App* sub) {
    sub->add_option("--pop", tier.pop_path, "Population CSV")->required()->check(CLI::ExistingFile);
    tier.cap.add(sub);
    sub->add_option("--prices", tier.prices, "Ascending tier prices, comma separated")->required()->delimiter(',');
    sub->add_option("--kappa", tier.kappa, "Price sensitivity")->capture_default_str();
    sub->add_option("--rho", tier.rho, "Regret exponent (rho = tau)")->capture_default_str();
    sub->add_option("-o,--out", tier.out, "Prefix for output CSVs");
  };
  auto* sw = tg->add_subcommand("sweep", "Enumerate two-tier equilibria over capacity splits");
  add_tier_common(sw);
  sw->add_option("--split-step", tier.split_step, "Split grid step")->capture_default_str();
  auto* st = tg->add_subcommand("stackelberg", "Leader/follower best-response dynamics");
  add_tier_common(st);
  st->add_option("--max-iters", tier.max_iters, "Iteration limit")->capture_default_str();
  st->add_option("--seed", tier.seed, "Seed for initial tiers (default 1)");

  SimulateOpts sim;
  auto* sm = app.add_subcommand("simulate", "Hourly simulation of staggered billing cycles");
  sm->add_option("--pop", sim.pop_path, "Population CSV")->required()->check(CLI::ExistingFile);
  sim.cap.add(sm);
  sm->add_option("--plan", sim.plan, "Fixed plan T,r")->delimiter(',')->expected(2);
  sm->add_flag("--optimize", sim.optimize, "Use the regret-minimizing plan");
  sm->add_option("--mode", sim.mode, "stream or download")->capture_default_str();
  sm->add_option("--codecs", sim.codecs, "Codec rates for --optimize in stream mode")->delimiter(',');
  sm->add_option("--rho", sim.rho, "Regret exponent for --optimize")->capture_default_str();
  sm->add_option("--days", sim.days, "Horizon in days (>= 30)")->capture_default_str();
  sm->add_flag("--diurnal", sim.diurnal, "Sinusoidal time-of-day activity");
  sm->add_flag("--states", sim.states, "Also write per-user hourly states");
  sm->add_option("--seed", sim.seed, "RNG seed (default 1)");
  sm->add_option("-o,--out", sim.out, "Prefix for trace CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string echo = "throttle_cli";
  for (int i = 1; i < argc; ++i) echo += std::string(" ") + argv[i];

  const auto start = std::chrono::steady_clock::now();
  Summary s;
  s.add("command", echo);
  try {
    if (*g) run_generate(gen, s);
    else if (*op) run_optimize(opt, s);
    else if (*sw) run_sweep(tier, s);
    else if (*st) run_stackelberg(tier, s);
    else if (*sm) run_simulate(sim, s);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  s.print(std::cout, ms);
  return 0;
}
