#include "ato/sim.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

#include "ato/stats.hpp"

namespace ato {

VecI SimState::pipeline_totals() const {
  VecI r(pipeline.size(), 0);
  for (std::size_t j = 0; j < pipeline.size(); ++j)
    for (const auto& [t, q] : pipeline[j]) r[j] += q;
  return r;
}

const VecI& SimState::ip_at(double t) const {
  const auto it = std::upper_bound(ip_hist_time.begin(), ip_hist_time.end(), t);
  if (it == ip_hist_time.begin())
    throw AuditError("inventory position history queried before first record");
  return ip_hist_value[(it - ip_hist_time.begin()) - 1];
}

AuditReport state_audit(const AtoSystem& system, const SimState& state,
                        const DemandPath& path) {
  AuditReport rep;
  const VecI in_transit = state.pipeline_totals();
  for (int j = 0; j < system.num_components(); ++j) {
    const std::int64_t rhs =
        state.on_hand[j] + in_transit[j] - idot(system.bom_row(j), state.backlog);
    if (state.ip[j] != rhs) {
      rep.pass = false;
      std::ostringstream os;
      os << "position identity violated for component " << j << " at t=" << state.clock
         << ": ip=" << state.ip[j] << " vs on_hand+pipeline-usage=" << rhs;
      rep.detail = os.str();
      return rep;
    }
  }
  if (state.clock >= 0.0) {
    for (int k = 1; k <= system.num_classes(); ++k) {
      const double L_k = system.class_lead_time(k);
      const VecI window = path.window(state.clock - L_k, state.clock);
      const VecI& ip_then = state.ip_at(state.clock - L_k);
      for (int t = 0; t < system.class_size(k); ++t) {
        const int j = system.class_begin(k) + t;
        const std::int64_t lhs =
            idot(system.bom_row(j), state.backlog) - state.on_hand[j];
        const std::int64_t rhs = idot(system.bom_row(j), window) - ip_then[j];
        if (lhs != rhs) {
          rep.pass = false;
          std::ostringstream os;
          os << "window identity violated for component " << j << " at t=" << state.clock
             << ": shortage=" << lhs << " vs window-demand-minus-position=" << rhs;
          rep.detail = os.str();
          return rep;
        }
      }
    }
  }
  return rep;
}

namespace {

enum class EventKind { kOrderArrival = 0, kTargetUpdate = 1 };

struct Event {
  double time;
  EventKind kind;
  int payload;  // component for arrivals, class for target updates
  long seq;
};

struct EventOrder {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    if (a.kind != b.kind) return static_cast<int>(a.kind) > static_cast<int>(b.kind);
    return a.seq > b.seq;
  }
};

}  // namespace

ReplicationResult run(const AtoSystem& system, const DemandModel& model,
                      const PolicyConfig& policy, const SimOptions& options) {
  if (!(options.horizon > 0.0)) throw ValidationError("horizon must be positive");
  const int m = system.num_products();
  const int n = system.num_components();
  const int K = system.num_classes();
  const double T = options.horizon;
  const double L_K = system.class_lead_time(K);
  const double warmup_end = options.warmup_fraction * T;

  const DemandPath path =
      sample_path(model, -L_K, T, options.seed, options.replication);

  TargetState targets(policy);
  BacklogSolver backlog_solver(system, targets.solver().costs().c);

  ReplicationResult out;
  out.seed = options.seed;
  out.replication = options.replication;

  SimState st;
  st.clock = -L_K;
  st.on_hand.assign(n, 0);
  st.backlog.assign(m, 0);
  st.ip.assign(n, 0);
  st.pipeline.assign(n, {});
  st.served_total.assign(m, 0);

  std::priority_queue<Event, std::vector<Event>, EventOrder> heap;
  long seq = 0;
  for (int k = 1; k <= K; ++k)
    heap.push({-system.class_lead_time(k), EventKind::kTargetUpdate, k, seq++});

  std::size_t demand_idx = 0;
  double holding_integral = 0.0;
  double backlog_integral = 0.0;
  double prev_t = -L_K;
  long last_prune = 0;

  const VecD& h = system.holding_costs();
  const VecD& b = system.backlog_costs();

  std::vector<VecI> q_per_class(K);
  std::vector<char> due(K + 1, 0);

  auto integrate_to = [&](double t) {
    const double lo = std::max(prev_t, warmup_end);
    const double hi = std::min(t, T);
    if (hi > lo) {
      double hold = 0.0, back = 0.0;
      for (int j = 0; j < n; ++j) hold += h[j] * static_cast<double>(st.on_hand[j]);
      for (int i = 0; i < m; ++i) back += b[i] * static_cast<double>(st.backlog[i]);
      holding_integral += hold * (hi - lo);
      backlog_integral += back * (hi - lo);
    }
    prev_t = t;
  };

  auto fail_audit = [&](const std::string& what) {
    ++out.audit_failures;
    std::ostringstream os;
    os << what << " [seed=" << options.seed << " rep=" << options.replication
       << " t=" << st.clock << "]";
    throw AuditError(os.str());
  };

  while (true) {
    double next_t = T + 1.0;
    if (!heap.empty()) next_t = heap.top().time;
    if (demand_idx < path.times.size())
      next_t = std::min(next_t, path.times[demand_idx]);
    if (next_t > T) break;

    integrate_to(next_t);
    st.clock = next_t;
    ++out.events;

    std::fill(due.begin(), due.end(), 0);

    // 1) order arrivals
    while (!heap.empty() && heap.top().time == next_t &&
           heap.top().kind == EventKind::kOrderArrival) {
      const Event ev = heap.top();
      heap.pop();
      auto& pipe = st.pipeline[ev.payload];
      if (pipe.empty() || pipe.front().first != next_t)
        throw SolverError("pipeline and calendar disagree");
      st.on_hand[ev.payload] += pipe.front().second;
      pipe.erase(pipe.begin());
    }

    // 2) demand arrival
    bool demand_arrived = false;
    if (demand_idx < path.times.size() && path.times[demand_idx] == next_t) {
      const VecI& d = path.sizes[demand_idx];
      demand_arrived = true;
      iadd(st.backlog, d);
      for (int j = 0; j < n; ++j) st.ip[j] -= idot(system.bom_row(j), d);
      // window exits trigger later target refreshes for the shorter classes
      for (int k = 1; k < K; ++k) {
        const double exit_t = next_t + (L_K - system.class_lead_time(k));
        if (exit_t <= T)
          heap.push({exit_t, EventKind::kTargetUpdate, k, seq++});
      }
      ++demand_idx;
    }

    // 3) scheduled target refreshes at this instant
    while (!heap.empty() && heap.top().time == next_t &&
           heap.top().kind == EventKind::kTargetUpdate) {
      due[heap.top().payload] = 1;
      heap.pop();
    }
    if (demand_arrived)
      for (int k = 1; k <= K; ++k) due[k] = 1;

    // 4) per class, target then ordering, upstream first
    for (int k = K; k >= 1; --k) {
      if (!due[k]) continue;
      if (next_t < -system.class_lead_time(k)) continue;  // not active yet
      const auto up = targets.update_class(k, next_t, path);
      if (up.y_jumped) {
        for (int kk = 1; kk < k; ++kk) {
          const double shifted =
              next_t + (system.class_lead_time(k) - system.class_lead_time(kk));
          if (shifted <= T)
            heap.push({shifted, EventKind::kTargetUpdate, kk, seq++});
        }
      }
      const double arrive = next_t + system.class_lead_time(k);
      for (int t = 0; t < system.class_size(k); ++t) {
        const int j = system.class_begin(k) + t;
        const auto od = order_decision(up.ip_target[t], st.ip[j]);
        if (od.quantity > 0) {
          st.pipeline[j].emplace_back(arrive, od.quantity);
          if (arrive <= T)
            heap.push({arrive, EventKind::kOrderArrival, j, seq++});
          st.ip[j] = od.ip_after;
        }
      }
    }

    // 5) allocation
    VecI targets_b;
    VecI backlog_before = st.backlog;
    if (next_t >= 0.0) {
      ++out.allocation_epochs;
      for (int k = 1; k <= K; ++k) {
        q_per_class[k - 1] = system.apply_class(k, st.backlog);
        for (int t = 0; t < system.class_size(k); ++t)
          q_per_class[k - 1][t] -= st.on_hand[system.class_begin(k) + t];
      }
      targets_b = backlog_solver.solve(q_per_class).targets;
      const auto alloc = allocate(system, st.on_hand, st.backlog, targets_b);
      st.on_hand = alloc.inventory_after;
      st.backlog = alloc.backlog_after;
      iadd(st.served_total, alloc.served);

      if (options.audit_every > 0 && out.events % options.audit_every == 0) {
        // serving conditions: at or below target, or a required component ran out
        for (int i = 0; i < m; ++i) {
          const bool at_target = st.backlog[i] <= targets_b[i];
          bool starved = false;
          for (int j = 0; j < n; ++j)
            if (system.bom(j, i) > 0 && st.on_hand[j] < system.bom(j, i)) starved = true;
          if (!at_target && !starved)
            fail_audit("allocation left backlog above target with feasible service");
          if (alloc.served[i] >
              std::max<std::int64_t>(backlog_before[i] - targets_b[i], 0))
            fail_audit("allocation served more than the target shortfall");
        }
        bool all_at_or_above = true;
        for (int i = 0; i < m; ++i)
          all_at_or_above = all_at_or_above && st.backlog[i] >= targets_b[i];
        if (all_at_or_above && st.backlog != targets_b)
          fail_audit("backlog dominates its target without matching it");
      }

      if (options.track_ideal_targets) {
        const VecI ideal =
            ideal_backlog_targets(system, backlog_solver, targets, next_t, path);
        for (int i = 0; i < m; ++i)
          out.max_backlog_gap =
              std::max(out.max_backlog_gap,
                       std::fabs(static_cast<double>(st.backlog[i] - ideal[i])));
      }
    }

    // record position history after the full instant
    st.ip_hist_time.push_back(next_t);
    st.ip_hist_value.push_back(st.ip);

    if (options.audit_every > 0 && out.events % options.audit_every == 0) {
      const auto rep = state_audit(system, st, path);
      if (!rep.pass) fail_audit(rep.detail);
      // the longest class follows a constant order-up-to level exactly
      for (int t = 0; t < system.class_size(K); ++t) {
        const int j = system.class_begin(K) + t;
        if (st.ip[j] != policy.y_top[t])
          fail_audit("longest lead-time position left its constant target");
      }
    }
    // gap diagnostics against the recorded targets
    for (int k = 1; k <= K; ++k) {
      if (next_t < -system.class_lead_time(k)) continue;
      const VecI& tgt = targets.ip_target_at(k, next_t);
      for (int t = 0; t < system.class_size(k); ++t) {
        const int j = system.class_begin(k) + t;
        out.max_ip_gap = std::max(
            out.max_ip_gap, std::fabs(static_cast<double>(st.ip[j] - tgt[t])));
      }
    }

    if (out.events - last_prune > 20000) {
      last_prune = out.events;
      targets.prune(next_t - L_K - 1e-9);
      const double cut = next_t - L_K - 1e-9;
      const auto it = std::upper_bound(st.ip_hist_time.begin(), st.ip_hist_time.end(), cut);
      if (it != st.ip_hist_time.begin()) {
        const std::size_t keep_from = (it - st.ip_hist_time.begin()) - 1;
        if (keep_from > 0) {
          st.ip_hist_time.erase(st.ip_hist_time.begin(),
                                st.ip_hist_time.begin() + keep_from);
          st.ip_hist_value.erase(st.ip_hist_value.begin(),
                                 st.ip_hist_value.begin() + keep_from);
        }
      }
    }
  }

  integrate_to(T);
  out.holding_integral = holding_integral;
  out.backlog_integral = backlog_integral;
  out.average_cost = (holding_integral + backlog_integral) / (T - warmup_end);
  return out;
}

CostEstimate estimate_long_run_cost(const std::vector<ReplicationResult>& results) {
  if (results.size() < 2)
    throw ValidationError("confidence intervals need at least two replications");
  VecD xs;
  for (const auto& r : results) xs.push_back(r.average_cost);
  CostEstimate est;
  est.replications = static_cast<int>(xs.size());
  est.mean = stats::mean(xs);
  const auto ci95 = stats::t_interval(xs, 0.95);
  const auto ci999 = stats::t_interval(xs, 0.999);
  est.ci95_lo = ci95.first;
  est.ci95_hi = ci95.second;
  est.ci999_lo = ci999.first;
  est.ci999_hi = ci999.second;
  return est;
}

}  // namespace ato
