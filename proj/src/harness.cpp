#include "ato/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace ato {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

VecD parse_vector(const std::string& s, const std::string& where, int line) {
  VecD out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    std::size_t pos = 0;
    double v = 0.0;
    bool ok = true;
    try {
      v = std::stod(tok, &pos);
    } catch (...) {
      ok = false;
    }
    if (!ok || pos != tok.size()) {
      std::ostringstream os;
      os << where << ":" << line << ": expected a list of numbers, got '" << s << "'";
      throw ConfigError(os.str());
    }
    out.push_back(v);
  }
  return out;
}

double parse_double(const std::string& s, const std::string& where, int line) {
  const VecD v = parse_vector(s, where, line);
  if (v.size() != 1) {
    std::ostringstream os;
    os << where << ":" << line << ": expected a single number, got '" << s << "'";
    throw ConfigError(os.str());
  }
  return v[0];
}

std::int64_t parse_int(const std::string& s, const std::string& where, int line) {
  const double v = parse_double(s, where, line);
  if (v != std::floor(v)) {
    std::ostringstream os;
    os << where << ":" << line << ": expected an integer, got '" << s << "'";
    throw ConfigError(os.str());
  }
  return static_cast<std::int64_t>(v);
}

[[noreturn]] void fail(const std::string& where, int line, const std::string& what) {
  std::ostringstream os;
  os << where << ":" << line << ": " << what;
  throw ConfigError(os.str());
}

}  // namespace

DemandModel ExperimentConfig::demand_model() const {
  if (independent_poisson) return DemandModel::independent_poisson(rates);
  return DemandModel::joint_pmf(order_rate, size_atoms);
}

RawSystem ExperimentConfig::raw_system(const CaseSpec& c) const {
  RawSystem raw;
  raw.products = products;
  raw.components = components;
  raw.bom = bom;
  raw.lead_times = c.lead_times.empty() ? base_lead_times : c.lead_times;
  raw.holding_costs = c.h_override.empty() ? holding_costs : c.h_override;
  raw.backlog_costs = c.b_override.empty() ? backlog_costs : c.b_override;
  return raw;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  bool saw_system = false, saw_demand = false;

  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, lineno, "malformed section header");
      section = line.substr(1, line.size() - 2);
      if (section != "system" && section != "demand" && section != "sp" &&
          section != "sim" && section != "tracking" && section != "cases")
        fail(origin, lineno, "unknown section [" + section + "]");
      if (section == "system") saw_system = true;
      if (section == "demand") saw_demand = true;
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (section == "system") {
      if (key == "products") {
        cfg.products = static_cast<int>(parse_int(value, origin, lineno));
      } else if (key == "components") {
        cfg.components = static_cast<int>(parse_int(value, origin, lineno));
      } else if (key == "bom") {
        for (const auto& row : split(value, ';'))
          cfg.bom.push_back(parse_vector(row, origin, lineno));
      } else if (key == "lead_times") {
        cfg.base_lead_times = parse_vector(value, origin, lineno);
      } else if (key == "holding_costs") {
        cfg.holding_costs = parse_vector(value, origin, lineno);
      } else if (key == "backlog_costs") {
        cfg.backlog_costs = parse_vector(value, origin, lineno);
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [system]");
      }
    } else if (section == "demand") {
      if (key == "kind") {
        if (value == "independent-poisson")
          cfg.independent_poisson = true;
        else if (value == "compound")
          cfg.independent_poisson = false;
        else
          fail(origin, lineno, "demand kind must be independent-poisson or compound");
      } else if (key == "rates") {
        cfg.rates = parse_vector(value, origin, lineno);
      } else if (key == "order_rate") {
        cfg.order_rate = parse_double(value, origin, lineno);
      } else if (key == "atom") {
        const auto parts = split(value, ':');
        if (parts.size() != 2) fail(origin, lineno, "atom wants 'sizes : probability'");
        const VecD sizes = parse_vector(parts[0], origin, lineno);
        VecI s;
        for (double v : sizes) {
          if (v != std::floor(v) || v < 0) fail(origin, lineno, "atom sizes must be non-negative integers");
          s.push_back(static_cast<std::int64_t>(v));
        }
        cfg.size_atoms.emplace_back(std::move(s), parse_double(parts[1], origin, lineno));
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [demand]");
      }
    } else if (section == "sp") {
      if (key == "backend") {
        if (value == "nested")
          cfg.backend = Backend::kNested;
        else if (value == "tree-lp")
          cfg.backend = Backend::kTreeLp;
        else
          fail(origin, lineno, "backend must be nested or tree-lp");
      } else if (key == "m_override") {
        cfg.m_override = parse_int(value, origin, lineno);
      } else if (key == "saa_samples") {
        cfg.saa_samples = static_cast<int>(parse_int(value, origin, lineno));
      } else if (key == "saa_seed") {
        cfg.saa_seed = static_cast<std::uint64_t>(parse_int(value, origin, lineno));
      } else if (key == "leaf_budget") {
        cfg.leaf_budget = parse_double(value, origin, lineno);
      } else if (key == "epsilon") {
        cfg.epsilon = parse_double(value, origin, lineno);
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [sp]");
      }
    } else if (section == "sim") {
      if (key == "horizon") {
        if (value == "auto") {
          cfg.horizon_auto = true;
        } else {
          cfg.horizon = parse_double(value, origin, lineno);
        }
      } else if (key == "warmup_fraction") {
        cfg.warmup_fraction = parse_double(value, origin, lineno);
      } else if (key == "replications") {
        cfg.replications = static_cast<int>(parse_int(value, origin, lineno));
      } else if (key == "base_seed") {
        cfg.base_seed = static_cast<std::uint64_t>(parse_int(value, origin, lineno));
      } else if (key == "audit_every") {
        cfg.audit_every = parse_int(value, origin, lineno);
      } else if (key == "track_ideal_targets") {
        cfg.track_ideal_targets = parse_int(value, origin, lineno) != 0;
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [sim]");
      }
    } else if (section == "tracking") {
      cfg.has_tracking = true;
      if (key == "weights") {
        cfg.tracking.weights = parse_vector(value, origin, lineno);
      } else if (key == "lags") {
        const VecD lags = parse_vector(value, origin, lineno);
        cfg.tracking.lags.assign(lags.begin(), lags.end());
      } else if (key == "target") {
        if (value == "constant")
          cfg.tracking.target = TrackingSpec::TargetKind::kConstant;
        else if (value == "window")
          cfg.tracking.target = TrackingSpec::TargetKind::kWindowFunctional;
        else
          fail(origin, lineno, "tracking target must be constant or window");
      } else if (key == "target_value") {
        cfg.tracking.target_value = parse_double(value, origin, lineno);
      } else if (key == "kappa") {
        cfg.tracking.kappa = parse_double(value, origin, lineno);
      } else if (key == "w0_sqrt_coeff") {
        cfg.tracking.w0_sqrt_coeff = parse_double(value, origin, lineno);
      } else if (key == "w0_offset") {
        cfg.tracking.w0_offset = parse_double(value, origin, lineno);
      } else if (key == "horizon_multiple") {
        cfg.tracking.horizon_multiple = parse_double(value, origin, lineno);
      } else if (key == "l_grid") {
        cfg.tracking_grid = parse_vector(value, origin, lineno);
      } else if (key == "reps") {
        cfg.tracking_reps = static_cast<int>(parse_int(value, origin, lineno));
      } else {
        fail(origin, lineno, "unknown key '" + key + "' in [tracking]");
      }
    } else if (section == "cases") {
      if (key != "case") fail(origin, lineno, "only 'case' entries belong in [cases]");
      const auto parts = split(value, '|');
      if (parts.size() < 3 || parts.size() > 4)
        fail(origin, lineno, "case wants 'label | orientation | lead times | overrides'");
      CaseSpec cs;
      cs.label = trim(parts[0]);
      cs.orientation = trim(parts[1]);
      cs.lead_times = parse_vector(parts[2], origin, lineno);
      if (cs.label.empty()) fail(origin, lineno, "case label must not be empty");
      if (parts.size() == 4) {
        for (const auto& ov : split(parts[3], ';')) {
          const std::string item = trim(ov);
          if (item.empty()) continue;
          const std::size_t e2 = item.find('=');
          if (e2 == std::string::npos) fail(origin, lineno, "override wants key=values");
          const std::string okey = trim(item.substr(0, e2));
          const VecD vals = parse_vector(item.substr(e2 + 1), origin, lineno);
          if (okey == "h")
            cs.h_override = vals;
          else if (okey == "b")
            cs.b_override = vals;
          else
            fail(origin, lineno, "unknown override '" + okey + "'");
        }
      }
      cfg.cases.push_back(std::move(cs));
    } else {
      fail(origin, lineno, "key outside of any section");
    }
  }

  if (!saw_system && cfg.cases.empty() && !cfg.has_tracking)
    throw ConfigError(origin + ": config has neither a [system] nor a [tracking] section");
  if (saw_system) {
    if (cfg.bom.empty()) throw ConfigError(origin + ": missing bom in [system]");
    if (cfg.products <= 0) throw ConfigError(origin + ": missing products in [system]");
    if (cfg.components <= 0) throw ConfigError(origin + ": missing components in [system]");
    if (cfg.holding_costs.empty())
      throw ConfigError(origin + ": missing holding_costs in [system]");
    if (cfg.backlog_costs.empty())
      throw ConfigError(origin + ": missing backlog_costs in [system]");
    if (cfg.cases.empty()) {
      if (cfg.base_lead_times.empty())
        throw ConfigError(origin + ": missing lead_times in [system] and no [cases]");
      CaseSpec cs;
      cs.label = "base";
      cs.orientation = "-";
      cfg.cases.push_back(std::move(cs));
    }
  }
  if (saw_demand && cfg.independent_poisson && cfg.rates.empty())
    throw ConfigError(origin + ": independent-poisson demand needs rates");
  return cfg;
}

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt_secs(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string csv_header(int num_classes) {
  std::string h = "case,orientation";
  for (int k = 1; k <= num_classes; ++k) h += ",L" + std::to_string(k);
  h += ",lower_bound,sim_mean,ci95_lo,ci95_hi,ci999_lo,ci999_hi,gap,bound_in_ci95,"
       "bound_in_ci999,sp_seconds,sim_seconds";
  return h;
}

std::string to_csv(const ExperimentRow& row) {
  std::string s = row.case_label + "," + row.orientation;
  for (double l : row.class_leads) s += "," + fmt_g(l);
  if (row.failed) {
    s += ",failed:" + row.error;
    return s;
  }
  s += "," + fmt_g(row.lower_bound) + "," + fmt_g(row.sim_mean) + "," +
       fmt_g(row.ci95_lo) + "," + fmt_g(row.ci95_hi) + "," + fmt_g(row.ci999_lo) + "," +
       fmt_g(row.ci999_hi) + "," + fmt_g(row.gap) + "," +
       (row.bound_in_ci95 ? "1" : "0") + "," + (row.bound_in_ci999 ? "1" : "0") + "," +
       fmt_secs(row.sp_seconds) + "," + fmt_secs(row.sim_seconds);
  return s;
}

void write_result_csv(const std::string& path, const std::vector<ExperimentRow>& rows,
                      int num_classes) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open output file: " + path);
  out << csv_header(num_classes) << "\n";
  for (const auto& row : rows) out << to_csv(row) << "\n";
}

std::vector<ExperimentRow> read_result_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open result file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty result file: " + path);
  const auto head = split(line, ',');
  int num_classes = 0;
  for (const auto& col : head)
    if (col.size() >= 2 && col[0] == 'L') ++num_classes;
  std::vector<ExperimentRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    ExperimentRow row;
    row.case_label = f.at(0);
    row.orientation = f.at(1);
    std::size_t p = 2;
    for (int k = 0; k < num_classes; ++k) row.class_leads.push_back(std::stod(f.at(p++)));
    if (f.at(p).rfind("failed:", 0) == 0) {
      row.failed = true;
      row.error = f.at(p).substr(7);
      rows.push_back(row);
      continue;
    }
    row.lower_bound = std::stod(f.at(p++));
    row.sim_mean = std::stod(f.at(p++));
    row.ci95_lo = std::stod(f.at(p++));
    row.ci95_hi = std::stod(f.at(p++));
    row.ci999_lo = std::stod(f.at(p++));
    row.ci999_hi = std::stod(f.at(p++));
    row.gap = std::stod(f.at(p++));
    row.bound_in_ci95 = f.at(p++) == "1";
    row.bound_in_ci999 = f.at(p++) == "1";
    row.sp_seconds = std::stod(f.at(p++));
    row.sim_seconds = std::stod(f.at(p++));
    rows.push_back(row);
  }
  return rows;
}

namespace {

// Fixed-size worker pool; tasks are indexed so output order is by index
// regardless of completion order.
void parallel_for(int threads, int count, const std::function<void(int)>& task) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      if (stop.load()) return;
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        stop.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(threads, count); ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<ExperimentRow> run_experiment(const ExperimentConfig& config,
                                          const RunOptions& options) {
  const DemandModel model = config.demand_model();
  const std::uint64_t base_seed =
      options.seed_override ? *options.seed_override : config.base_seed;

  std::vector<ExperimentRow> rows(config.cases.size());
  for (std::size_t ci = 0; ci < config.cases.size(); ++ci) {
    const CaseSpec& cs = config.cases[ci];
    ExperimentRow& row = rows[ci];
    row.case_label = cs.label;
    row.orientation = cs.orientation.empty() ? "-" : cs.orientation;
    try {
      const AtoSystem sys = validate_system(config.raw_system(cs));
      for (int k = 1; k <= sys.num_classes(); ++k)
        row.class_leads.push_back(sys.class_lead_time(k));

      TreeOptions topt;
      topt.m_override = config.m_override;
      topt.saa_samples = config.saa_samples;
      topt.saa_seed = config.saa_seed;
      topt.leaf_budget = config.backend == Backend::kNested
                             ? std::numeric_limits<double>::infinity()
                             : config.leaf_budget;
      SpOptions sopt;
      sopt.epsilon = config.epsilon;

      const auto sp_start = std::chrono::steady_clock::now();
      const ScenarioTree tree = build_scenario_tree(sys, model, topt);
      SpSolver solver(sys, tree, sopt);
      solver.set_demand_model(&model);
      const LowerBound lb = solver.lower_bound(config.backend);
      row.lower_bound = lb.value;
      const PolicyConfig policy = make_policy_config(sys, tree, sopt);
      row.sp_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - sp_start)
              .count();

      if (options.lower_bound_only) {
        row.gap = 0.0;
        continue;
      }

      const double horizon =
          config.horizon_auto
              ? std::max(1e4, 1250.0 * sys.class_lead_time(sys.num_classes()))
              : config.horizon;

      const auto sim_start = std::chrono::steady_clock::now();
      std::vector<ReplicationResult> reps(config.replications);
      parallel_for(options.threads, config.replications, [&](int r) {
        SimOptions so;
        so.horizon = horizon;
        so.warmup_fraction = config.warmup_fraction;
        so.audit_every = config.audit_every;
        so.track_ideal_targets = config.track_ideal_targets;
        so.seed = base_seed + ci;
        so.replication = static_cast<std::uint64_t>(r);
        reps[r] = run(sys, model, policy, so);
      });
      row.sim_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - sim_start)
              .count();

      const CostEstimate est = estimate_long_run_cost(reps);
      row.sim_mean = est.mean;
      row.ci95_lo = est.ci95_lo;
      row.ci95_hi = est.ci95_hi;
      row.ci999_lo = est.ci999_lo;
      row.ci999_hi = est.ci999_hi;
      row.gap = row.lower_bound == 0.0
                    ? 0.0
                    : (row.sim_mean - row.lower_bound) / row.lower_bound;
      row.bound_in_ci95 =
          row.lower_bound >= row.ci95_lo && row.lower_bound <= row.ci95_hi;
      row.bound_in_ci999 =
          row.lower_bound >= row.ci999_lo && row.lower_bound <= row.ci999_hi;
      if (options.log) *options.log << to_csv(row) << "\n" << std::flush;
    } catch (const AtoError& e) {
      // Flush what we have plus a marker row, then propagate.
      row.failed = true;
      row.error = e.what();
      if (options.log) *options.log << to_csv(row) << "\n" << std::flush;
      throw;
    }
  }
  return rows;
}

std::vector<SweepRow> run_tracking_experiment(const ExperimentConfig& config,
                                              const RunOptions& options) {
  if (!config.has_tracking)
    throw ConfigError("config has no [tracking] section");
  TrackingSpec spec = config.tracking;
  if (!config.rates.empty() || !config.independent_poisson)
    spec.model = config.demand_model();
  const std::uint64_t seed =
      options.seed_override ? *options.seed_override : config.base_seed;
  VecD grid = config.tracking_grid;
  if (grid.empty()) grid = {10.0, 40.0, 160.0};
  return convergence_sweep(spec, grid, config.tracking_reps, seed);
}

void write_tracking_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open output file: " + path);
  out << "L,mean_sup_gap,ci_low,ci_high,reps\n";
  for (const auto& r : rows)
    out << fmt_g(r.L) << "," << fmt_g(r.mean_sup_gap) << "," << fmt_g(r.ci_lo) << ","
        << fmt_g(r.ci_hi) << "," << r.reps << "\n";
}

}  // namespace ato
