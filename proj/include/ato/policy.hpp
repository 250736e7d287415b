#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "ato/demand.hpp"
#include "ato/model.hpp"
#include "ato/sp.hpp"

namespace ato {

// Everything a replication needs to drive the policy. The top-stage decision
// is solved once per experiment (it is constant over time) and shared;
// per-replication solvers handle the stages whose inputs move with demand.
struct PolicyConfig {
  const AtoSystem* system = nullptr;
  const ScenarioTree* tree = nullptr;
  VecI y_top;              // constant stage-K decision
  SpOptions sp_options;
};

PolicyConfig make_policy_config(const AtoSystem& system, const ScenarioTree& tree,
                                SpOptions options = {});

// Piecewise-constant record of stage decisions and order-up-to targets,
// owned by a single replication.
class TargetState {
 public:
  TargetState(const PolicyConfig& config);

  struct Update {
    VecI ip_target;   // order-up-to level per class-k component
    bool y_jumped;    // stage decision changed at this instant
  };

  // Recompute the class-k targets at time t. Upstream decisions are read at
  // their shifted times, so classes must be updated in descending k order
  // within one instant.
  Update update_class(int k, double t, const DemandPath& path);

  // Value of Y^k at the latest update time <= t.
  const VecI& y_at(int k, double t) const;
  // Order-up-to target of class k at the latest update time <= t.
  const VecI& ip_target_at(int k, double t) const;
  bool has_target(int k, double t) const;

  // Drop history older than `t`; lookups never reach further back than the
  // longest lead time.
  void prune(double t);

  SpSolver& solver() { return solver_; }
  const PolicyConfig& config() const { return *config_; }

 private:
  struct Series {
    std::vector<double> time;
    std::vector<VecI> value;
    void append(double t, VecI v);
    const VecI& at(double t) const;
    bool has(double t) const;
    void prune(double t);
  };

  const PolicyConfig* config_;
  const AtoSystem* sys_;
  SpSolver solver_;
  std::vector<Series> y_series_;   // per class
  std::vector<Series> ip_series_;  // per class
};

VecI replenishment_targets(TargetState& state, int k, double t, const DemandPath& path);

struct OrderDecision {
  std::int64_t quantity;
  std::int64_t ip_after;
};

// Order up to the target; never below the current position.
OrderDecision order_decision(std::int64_t target, std::int64_t ip_before);

struct BacklogTargets {
  VecI targets;     // integral, feasible for A^k B >= Q^k
  VecD lp_optimum;  // pre-rounding solution
};

// min c.B s.t. B >= 0, A^k B >= Q^k, rounded to a feasible integer point by
// index-ordered ceiling repairs.
class BacklogSolver {
 public:
  BacklogSolver(const AtoSystem& system, VecD perturbed_costs,
                std::size_t memo_capacity = 1u << 18);
  BacklogTargets solve(const std::vector<VecI>& q_per_class);
  const VecD& costs() const { return c_; }

 private:
  const AtoSystem& sys_;
  VecD c_;
  std::size_t memo_capacity_;
  struct KeyHash {
    std::size_t operator()(const VecI& key) const;
  };
  std::unordered_map<VecI, BacklogTargets, KeyHash> memo_;
};

BacklogTargets backlog_targets(const AtoSystem& system,
                               const std::vector<VecI>& q_per_class, const VecD& costs);

struct AllocationResult {
  VecI served;
  VecI inventory_after;
  VecI backlog_after;
};

// Serve products in index order, each up to its target or until a component
// runs out.
AllocationResult allocate(const AtoSystem& system, const VecI& inventory,
                          const VecI& backlog_before, const VecI& targets);

// Balance levels implied by targets having been met exactly; used for the
// tracking diagnostics, never for control.
std::vector<VecI> ideal_balances(const AtoSystem& system, const TargetState& state,
                                 double t, const DemandPath& path);

VecI ideal_backlog_targets(const AtoSystem& system, BacklogSolver& solver,
                           const TargetState& state, double t, const DemandPath& path);

}  // namespace ato
