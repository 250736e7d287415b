#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ato/demand.hpp"
#include "ato/model.hpp"
#include "ato/sim.hpp"
#include "ato/sp.hpp"
#include "ato/tracking.hpp"

namespace ato {

struct CaseSpec {
  std::string label;
  std::string orientation;
  VecD lead_times;  // per component
  VecD h_override;  // empty = keep base
  VecD b_override;
};

struct ExperimentConfig {
  // [system]
  int products = 0;
  int components = 0;
  std::vector<VecD> bom;
  VecD holding_costs;
  VecD backlog_costs;
  VecD base_lead_times;

  // [demand]
  bool independent_poisson = true;
  VecD rates;
  double order_rate = 0.0;
  std::vector<std::pair<VecI, double>> size_atoms;

  // [sp]
  Backend backend = Backend::kNested;
  std::int64_t m_override = 0;
  int saa_samples = 0;
  std::uint64_t saa_seed = 0;
  double leaf_budget = 1e7;
  double epsilon = 1e-9;

  // [sim]
  double horizon = 1e4;
  bool horizon_auto = false;  // max(1e4, 1250 * L_K) per case
  double warmup_fraction = 0.1;
  int replications = 30;
  std::uint64_t base_seed = 1;
  long audit_every = 1000;
  bool track_ideal_targets = false;

  // [tracking]
  TrackingSpec tracking;
  VecD tracking_grid;
  int tracking_reps = 200;
  bool has_tracking = false;

  std::vector<CaseSpec> cases;

  DemandModel demand_model() const;
  RawSystem raw_system(const CaseSpec& c) const;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

struct ExperimentRow {
  std::string case_label;
  std::string orientation;
  VecD class_leads;
  double lower_bound = 0.0;
  double sim_mean = 0.0;
  double ci95_lo = 0.0, ci95_hi = 0.0;
  double ci999_lo = 0.0, ci999_hi = 0.0;
  double gap = 0.0;
  bool bound_in_ci95 = false;
  bool bound_in_ci999 = false;
  double sp_seconds = 0.0;
  double sim_seconds = 0.0;
  bool failed = false;
  std::string error;
};

std::string csv_header(int num_classes);
std::string to_csv(const ExperimentRow& row);
std::vector<ExperimentRow> read_result_csv(const std::string& path);

struct RunOptions {
  int threads = 2;
  std::optional<std::uint64_t> seed_override;
  bool lower_bound_only = false;
  std::ostream* log = nullptr;
};

std::vector<ExperimentRow> run_experiment(const ExperimentConfig& config,
                                          const RunOptions& options);
void write_result_csv(const std::string& path, const std::vector<ExperimentRow>& rows,
                      int num_classes);

std::vector<SweepRow> run_tracking_experiment(const ExperimentConfig& config,
                                              const RunOptions& options);
void write_tracking_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace ato
