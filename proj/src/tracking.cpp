#include "ato/tracking.hpp"

#include <algorithm>
#include <cmath>

namespace ato {

namespace {

double target_at(const TrackingSpec& spec, const DemandPath& path, double t) {
  switch (spec.target) {
    case TrackingSpec::TargetKind::kConstant:
      return spec.target_value;
    case TrackingSpec::TargetKind::kWindowFunctional: {
      double v = spec.target_value;
      for (double s : spec.lags) {
        const VecI w = path.window(t - s, t);
        v -= spec.kappa * dot(spec.weights, w);
      }
      return v;
    }
    default:
      return spec.callback(path, t);
  }
}

}  // namespace

TrackingRun run_tracking(const TrackingSpec& spec, double L, double horizon,
                         std::uint64_t seed, std::uint64_t replication) {
  if (!(horizon > 0.0)) throw ValidationError("tracking horizon must be positive");
  double max_lag = 0.0;
  for (double s : spec.lags) {
    if (s < 0.0 || s > L) throw ValidationError("tracking lag must lie in [0, L]");
    max_lag = std::max(max_lag, s);
  }
  const VecD mu = spec.model.mean_rate();
  if (dot(spec.weights, mu) <= 0.0)
    throw ValidationError("tracking weights must consume demand at a positive rate");

  const double t0 = std::max(-L + max_lag, -L * spec.start_fraction);
  const DemandPath path = sample_path(spec.model, -L, horizon, seed, replication);

  // Event times: arrivals plus target-window exits.
  std::vector<double> events;
  for (double t : path.times) {
    if (t <= t0) continue;
    events.push_back(t);
    for (double s : spec.lags)
      if (t + s <= horizon && s > 0.0) events.push_back(t + s);
  }
  std::sort(events.begin(), events.end());
  events.erase(std::unique(events.begin(), events.end()), events.end());

  TrackingRun run;
  run.seed = seed;
  run.replication = replication;
  const double sqrt_l = std::sqrt(L);
  run.w0 = target_at(spec, path, t0) + spec.w0_sqrt_coeff * sqrt_l + spec.w0_offset;

  double target = target_at(spec, path, t0);
  double w = std::max(run.w0, target);
  run.sup_gap_scaled = -1.0;
  auto note = [&](double t) {
    const double gap = (w - target) / sqrt_l;
    if (gap > run.sup_gap_scaled) {
      run.sup_gap_scaled = gap;
      run.argmax_time = t;
    }
  };
  // The gap is constant between events, so the supremum over t >= 0 is the
  // max over the state carried into time zero and the states after each
  // later event.
  bool crossed_zero = t0 >= 0.0;
  if (crossed_zero) note(t0);

  std::size_t arrival = path.first_after(t0);
  for (double t : events) {
    if (t > horizon) break;
    if (!crossed_zero && t >= 0.0) {
      crossed_zero = true;
      note(0.0);
    }
    // demand decrement first, then the target move, then the clamp
    if (arrival < path.times.size() && path.times[arrival] == t) {
      w -= dot(spec.weights, path.sizes[arrival]);
      ++arrival;
    }
    target = target_at(spec, path, t);
    w = std::max(w, target);
    if (t >= 0.0) note(t);
  }
  if (!crossed_zero) note(0.0);
  if (run.sup_gap_scaled < 0.0) run.sup_gap_scaled = 0.0;
  return run;
}

std::vector<SweepRow> convergence_sweep(const TrackingSpec& spec, const VecD& l_grid,
                                        int reps, std::uint64_t seed) {
  if (l_grid.empty()) throw ValidationError("tracking sweep needs a non-empty grid");
  std::vector<SweepRow> rows;
  for (double L : l_grid) {
    VecD sups;
    for (int r = 0; r < reps; ++r) {
      const auto run = run_tracking(spec, L, spec.horizon_multiple * L, seed, r);
      sups.push_back(run.sup_gap_scaled);
    }
    SweepRow row;
    row.L = L;
    row.reps = reps;
    row.mean_sup_gap = stats::mean(sups);
    if (reps >= 2) {
      const auto ci = stats::t_interval(sups, 0.95);
      row.ci_lo = ci.first;
      row.ci_hi = ci.second;
    } else {
      row.ci_lo = row.ci_hi = row.mean_sup_gap;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ato
