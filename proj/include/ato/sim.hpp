#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ato/demand.hpp"
#include "ato/model.hpp"
#include "ato/policy.hpp"

namespace ato {

// Mutable replication state: on-hand stock, pipeline orders, backlogs and
// inventory positions, plus enough position history to check the window
// identity at any audited instant.
struct SimState {
  double clock = 0.0;
  VecI on_hand;                     // per component
  VecI backlog;                     // per product, after serving
  VecI ip;                          // per component, after ordering
  std::vector<std::vector<std::pair<double, std::int64_t>>> pipeline;  // FIFO per component
  VecI served_total;
  // piecewise-constant history of ip, kept for one longest lead time
  std::vector<double> ip_hist_time;
  std::vector<VecI> ip_hist_value;

  VecI pipeline_totals() const;
  const VecI& ip_at(double t) const;
};

struct AuditReport {
  bool pass = true;
  std::string detail;
};

// Flow identities: position = on hand + in transit - component backlog, and
// the lead-time window identity for t >= 0. Integer-exact.
AuditReport state_audit(const AtoSystem& system, const SimState& state,
                        const DemandPath& path);

struct SimOptions {
  double horizon = 1e4;
  double warmup_fraction = 0.1;
  long audit_every = 1000;  // events between audits (1 = every event)
  bool track_ideal_targets = false;
  bool collect_gap_profile = false;
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;
};

struct ReplicationResult {
  double average_cost = 0.0;
  double holding_integral = 0.0;
  double backlog_integral = 0.0;
  long audit_failures = 0;
  long events = 0;
  long allocation_epochs = 0;
  double max_ip_gap = 0.0;       // sup over events of max_j |IP_j - target_j|
  double max_backlog_gap = 0.0;  // sup over epochs of max_i |B_i - ideal target_i|
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;

  bool operator==(const ReplicationResult&) const = default;
};

ReplicationResult run(const AtoSystem& system, const DemandModel& model,
                      const PolicyConfig& policy, const SimOptions& options);

struct CostEstimate {
  double mean = 0.0;
  double ci95_lo = 0.0, ci95_hi = 0.0;
  double ci999_lo = 0.0, ci999_hi = 0.0;
  int replications = 0;
};

CostEstimate estimate_long_run_cost(const std::vector<ReplicationResult>& results);

}  // namespace ato
