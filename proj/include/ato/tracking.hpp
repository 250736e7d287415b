#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ato/demand.hpp"
#include "ato/stats.hpp"

namespace ato {

// A tracking process matches every upward move of its target instantly but
// can only drift down with demand. The run reports the largest scaled
// excursion above the target over t >= 0.
struct TrackingSpec {
  VecD weights;                 // consumption per demand unit, some entry > 0
  std::vector<double> lags;     // window lags of the target functional
  DemandModel model = DemandModel::independent_poisson({1.0});

  enum class TargetKind { kConstant, kWindowFunctional, kCallback };
  TargetKind target = TargetKind::kConstant;
  double target_value = 0.0;    // constant part
  double kappa = 1.0;           // window functional slope
  std::function<double(const DemandPath&, double)> callback;

  // start time t0 = max(-L + max lag, -L * start_fraction); the default runs
  // from -L so initial offsets of order sqrt(L) burn off by time zero.
  double start_fraction = 1.0;
  double w0_sqrt_coeff = 0.0;   // W0 = target(t0) + w0_sqrt_coeff * sqrt(L)
  double w0_offset = 0.0;
  double horizon_multiple = 20.0;  // simulate 20L past zero
};

struct TrackingRun {
  double sup_gap_scaled = 0.0;  // sup_{t>=0} (W - T) / sqrt(L)
  double argmax_time = 0.0;
  double w0 = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;
};

TrackingRun run_tracking(const TrackingSpec& spec, double L, double horizon,
                         std::uint64_t seed, std::uint64_t replication = 0);

struct SweepRow {
  double L = 0.0;
  double mean_sup_gap = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int reps = 0;
};

std::vector<SweepRow> convergence_sweep(const TrackingSpec& spec, const VecD& l_grid,
                                        int reps, std::uint64_t seed);

}  // namespace ato
