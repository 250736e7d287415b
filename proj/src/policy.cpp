#include "ato/policy.hpp"

#include <algorithm>
#include <cmath>

#include "ato/lp.hpp"

namespace ato {

PolicyConfig make_policy_config(const AtoSystem& system, const ScenarioTree& tree,
                                SpOptions options) {
  PolicyConfig cfg;
  cfg.system = &system;
  cfg.tree = &tree;
  cfg.sp_options = options;
  SpSolver solver(system, tree, options);
  const int K = system.num_classes();
  cfg.y_top =
      solver.solve_stage(K, {}, VecI(system.num_products(), 0), Backend::kNested)
          .y_rounded;
  return cfg;
}

void TargetState::Series::append(double t, VecI v) {
  if (!time.empty() && time.back() == t) {
    value.back() = std::move(v);
    return;
  }
  time.push_back(t);
  value.push_back(std::move(v));
}

const VecI& TargetState::Series::at(double t) const {
  const auto it = std::upper_bound(time.begin(), time.end(), t);
  if (it == time.begin()) throw AuditError("target series queried before first update");
  return value[(it - time.begin()) - 1];
}

bool TargetState::Series::has(double t) const {
  return !time.empty() && time.front() <= t;
}

void TargetState::Series::prune(double t) {
  // Keep the newest entry at or before t so lookups at t still resolve.
  const auto it = std::upper_bound(time.begin(), time.end(), t);
  if (it == time.begin()) return;
  const std::size_t keep_from = (it - time.begin()) - 1;
  if (keep_from == 0) return;
  time.erase(time.begin(), time.begin() + keep_from);
  value.erase(value.begin(), value.begin() + keep_from);
}

TargetState::TargetState(const PolicyConfig& config)
    : config_(&config),
      sys_(config.system),
      solver_(*config.system, *config.tree, config.sp_options),
      y_series_(config.system->num_classes()),
      ip_series_(config.system->num_classes()) {}

TargetState::Update TargetState::update_class(int k, double t, const DemandPath& path) {
  const int K = sys_->num_classes();
  const double L_K = sys_->class_lead_time(K);
  const double L_k = sys_->class_lead_time(k);

  VecI x(sys_->num_products(), 0);
  if (L_K > L_k) x = path.window(t - (L_K - L_k), t);

  VecI y;
  if (k == K) {
    y = config_->y_top;
  } else {
    std::vector<VecD> upstream;
    for (int l = k + 1; l <= K; ++l) {
      const double shifted = t - (sys_->class_lead_time(l) - L_k);
      upstream.push_back(to_double(y_series_[l - 1].at(shifted)));
    }
    y = solver_.solve_stage(k, upstream, x, Backend::kNested).y_rounded;
  }

  Update up;
  up.y_jumped = y_series_[k - 1].time.empty() || y_series_[k - 1].value.back() != y;
  up.ip_target = y;
  const VecI usage = sys_->apply_class(k, x);
  for (std::size_t tix = 0; tix < up.ip_target.size(); ++tix)
    up.ip_target[tix] -= usage[tix];
  y_series_[k - 1].append(t, std::move(y));
  ip_series_[k - 1].append(t, up.ip_target);
  return up;
}

const VecI& TargetState::y_at(int k, double t) const { return y_series_[k - 1].at(t); }

const VecI& TargetState::ip_target_at(int k, double t) const {
  return ip_series_[k - 1].at(t);
}

bool TargetState::has_target(int k, double t) const { return ip_series_[k - 1].has(t); }

void TargetState::prune(double t) {
  for (auto& s : y_series_) s.prune(t);
  for (auto& s : ip_series_) s.prune(t);
}

VecI replenishment_targets(TargetState& state, int k, double t, const DemandPath& path) {
  return state.update_class(k, t, path).ip_target;
}

OrderDecision order_decision(std::int64_t target, std::int64_t ip_before) {
  OrderDecision d;
  d.quantity = std::max<std::int64_t>(target - ip_before, 0);
  d.ip_after = std::max(target, ip_before);
  return d;
}

std::size_t BacklogSolver::KeyHash::operator()(const VecI& key) const {
  std::uint64_t h = 1469598103934665603ull;
  for (auto v : key) {
    h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 1099511628211ull;
  }
  return static_cast<std::size_t>(h);
}

BacklogSolver::BacklogSolver(const AtoSystem& system, VecD perturbed_costs,
                             std::size_t memo_capacity)
    : sys_(system), c_(std::move(perturbed_costs)), memo_capacity_(memo_capacity) {}

BacklogTargets BacklogSolver::solve(const std::vector<VecI>& q_per_class) {
  VecI key;
  for (const auto& q : q_per_class) key.insert(key.end(), q.begin(), q.end());
  const auto hit = memo_.find(key);
  if (hit != memo_.end()) return hit->second;

  const int m = sys_.num_products();
  BacklogTargets out;
  bool any_positive = false;
  for (auto v : key) any_positive = any_positive || v > 0;
  if (!any_positive) {
    out.targets.assign(m, 0);
    out.lp_optimum.assign(m, 0.0);
  } else {
    lp::LpProblem p;
    for (int i = 0; i < m; ++i) p.add_variable(c_[i], {0.0, lp::kInf});
    for (int k = 1; k <= sys_.num_classes(); ++k) {
      const VecI& q = q_per_class[k - 1];
      for (int t = 0; t < sys_.class_size(k); ++t) {
        const int j = sys_.class_begin(k) + t;
        const int r = p.add_row(lp::RowSense::kGe, static_cast<double>(q[t]));
        for (int i = 0; i < m; ++i)
          if (sys_.bom(j, i) != 0) p.set(r, i, static_cast<double>(sys_.bom(j, i)));
      }
    }
    const auto sol = lp::solve(p);
    if (sol.status != lp::LpStatus::kOptimal)
      throw SolverError("backlog target program must be feasible and bounded");
    out.lp_optimum = sol.x;
    out.targets = round_half_even(sol.x);
    for (auto& v : out.targets) v = std::max<std::int64_t>(v, 0);
    // Ceiling repairs in component order, bumping the lowest-index user.
    for (int k = 1; k <= sys_.num_classes(); ++k) {
      const VecI& q = q_per_class[k - 1];
      for (int t = 0; t < sys_.class_size(k); ++t) {
        const int j = sys_.class_begin(k) + t;
        const std::int64_t have = idot(sys_.bom_row(j), out.targets);
        if (have >= q[t]) continue;
        const std::int64_t deficit = q[t] - have;
        for (int i = 0; i < m; ++i) {
          if (sys_.bom(j, i) > 0) {
            out.targets[i] += (deficit + sys_.bom(j, i) - 1) / sys_.bom(j, i);
            break;
          }
        }
      }
    }
  }

  if (memo_.size() >= memo_capacity_) memo_.clear();
  memo_.emplace(std::move(key), out);
  return out;
}

BacklogTargets backlog_targets(const AtoSystem& system,
                               const std::vector<VecI>& q_per_class, const VecD& costs) {
  BacklogSolver solver(system, costs);
  return solver.solve(q_per_class);
}

AllocationResult allocate(const AtoSystem& system, const VecI& inventory,
                          const VecI& backlog_before, const VecI& targets) {
  const int m = system.num_products();
  AllocationResult res;
  res.served.assign(m, 0);
  res.inventory_after = inventory;
  res.backlog_after = backlog_before;
  for (int i = 0; i < m; ++i) {
    const std::int64_t want = backlog_before[i] - targets[i];
    if (want <= 0) continue;
    std::int64_t feasible = want;
    for (int j = 0; j < system.num_components(); ++j) {
      const std::int64_t a = system.bom(j, i);
      if (a > 0) feasible = std::min(feasible, res.inventory_after[j] / a);
    }
    if (feasible <= 0) continue;
    res.served[i] = feasible;
    res.backlog_after[i] -= feasible;
    for (int j = 0; j < system.num_components(); ++j)
      res.inventory_after[j] -= system.bom(j, i) * feasible;
  }
  return res;
}

std::vector<VecI> ideal_balances(const AtoSystem& system, const TargetState& state,
                                 double t, const DemandPath& path) {
  std::vector<VecI> q;
  for (int k = 1; k <= system.num_classes(); ++k) {
    const double L_k = system.class_lead_time(k);
    const VecI window = path.window(t - L_k, t);
    VecI qk = system.apply_class(k, window);
    const VecI& target = state.ip_target_at(k, t - L_k);
    for (int tix = 0; tix < system.class_size(k); ++tix) qk[tix] -= target[tix];
    q.push_back(std::move(qk));
  }
  return q;
}

VecI ideal_backlog_targets(const AtoSystem& system, BacklogSolver& solver,
                           const TargetState& state, double t, const DemandPath& path) {
  return solver.solve(ideal_balances(system, state, t, path)).targets;
}

}  // namespace ato
