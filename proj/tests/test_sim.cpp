#include "doctest.h"

#include <cmath>

#include "ato/rng.hpp"
#include "ato/sim.hpp"
#include "ato/stats.hpp"
#include "test_util.hpp"

using namespace ato;

TEST_SUITE_BEGIN("sim");

namespace {

PolicyConfig n_policy(const AtoSystem& sys, const DemandModel& model,
                      const ScenarioTree& tree) {
  return make_policy_config(sys, tree);
}

}  // namespace

TEST_CASE("zero demand runs at zero cost") {
  const AtoSystem sys = validate_system(testutil::n_system(true));
  const auto model = DemandModel::independent_poisson({0.0, 0.0});
  const ScenarioTree tree = build_scenario_tree(sys, model, 0);
  const PolicyConfig policy = make_policy_config(sys, tree);
  SimOptions so;
  so.horizon = 500.0;
  so.audit_every = 1;
  const auto res = run(sys, model, policy, so);
  CHECK(res.average_cost == 0.0);
  CHECK(res.audit_failures == 0);
  CHECK(res.max_ip_gap == 0.0);
}

TEST_CASE("replications are reproducible bit for bit") {
  const AtoSystem sys = validate_system(testutil::n_system(true));
  const auto model = DemandModel::independent_poisson({5.0, 5.0});
  const ScenarioTree tree = build_scenario_tree(sys, model, 0);
  const PolicyConfig policy = make_policy_config(sys, tree);
  SimOptions so;
  so.horizon = 200.0;
  so.seed = 42;
  so.replication = 3;
  so.audit_every = 1;
  const auto a = run(sys, model, policy, so);
  const auto b = run(sys, model, policy, so);
  CHECK(a == b);
  so.replication = 4;
  const auto c = run(sys, model, policy, so);
  CHECK(a.average_cost != c.average_cost);
}

TEST_CASE("audit passes on fresh and in-transit states, fails when corrupted") {
  const AtoSystem sys = validate_system(testutil::n_system(true));
  DemandPath path;
  path.t_start = -1.5;
  path.t_end = 10.0;
  path.num_products = 2;
  path.cumulative = {{0, 0}};

  SimState st;
  st.clock = -1.5;
  st.on_hand = {0, 0};
  st.backlog = {0, 0};
  st.ip = {0, 0};
  st.pipeline.assign(2, {});
  st.served_total = {0, 0};
  st.ip_hist_time = {-1.5};
  st.ip_hist_value = {{0, 0}};
  CHECK(state_audit(sys, st, path).pass);

  // one in-transit order: position equals the pipeline quantity
  st.pipeline[0].push_back({0.5, 7});
  st.ip[0] = 7;
  CHECK(state_audit(sys, st, path).pass);

  st.on_hand[0] = 3;  // deliberately corrupt on-hand stock
  const auto rep = state_audit(sys, st, path);
  CHECK(!rep.pass);
  CHECK(rep.detail.find("position identity") != std::string::npos);
}

TEST_CASE("single-item long-run cost matches the stationary oracle") {
  const AtoSystem sys = validate_system(testutil::single_item(2.0, 1.0, 9.0));
  const auto model = DemandModel::independent_poisson({3.0});
  const ScenarioTree tree = build_scenario_tree(sys, model, 0);
  const PolicyConfig policy = make_policy_config(sys, tree);
  const std::int64_t y = policy.y_top[0];

  // stationary cost of a constant order-up-to level y against Poisson
  // lead-time demand
  const double lam = 6.0;
  double oracle = 0.0;
  double term = std::exp(-lam);
  for (int d = 0; d < 200; ++d) {
    oracle += term * (1.0 * std::max<double>(y - d, 0) + 9.0 * std::max<double>(d - y, 0));
    term *= lam / (d + 1);
  }

  std::vector<ReplicationResult> reps;
  for (int r = 0; r < 8; ++r) {
    SimOptions so;
    so.horizon = 3000.0;
    so.seed = 500;
    so.replication = r;
    so.audit_every = 100;
    reps.push_back(run(sys, model, policy, so));
  }
  VecD xs;
  for (const auto& r : reps) xs.push_back(r.average_cost);
  const double mean = stats::mean(xs);
  const double se = std::sqrt(stats::sample_variance(xs) / xs.size());
  CHECK(std::fabs(mean - oracle) < 2.5 * se + 1e-12);
}

TEST_CASE("n-system run satisfies every audited identity" * doctest::timeout(600)) {
  for (bool common_short : {true, false}) {
    const AtoSystem sys = validate_system(
        testutil::n_system(common_short, 1.0, 1.5, 10.0, 1.0, {4.0, 5.0}));
    const auto model = DemandModel::independent_poisson({5.0, 5.0});
    const ScenarioTree tree = build_scenario_tree(sys, model, 0);
    const PolicyConfig policy = make_policy_config(sys, tree);
    SimOptions so;
    so.horizon = 400.0;
    so.seed = 7;
    so.audit_every = 1;  // every event
    so.track_ideal_targets = true;
    const auto res = run(sys, model, policy, so);
    CHECK(res.audit_failures == 0);
    CHECK(res.events > 3000);
    CHECK(res.average_cost > 0.0);
  }
}

TEST_CASE("confidence intervals collapse on identical replications") {
  std::vector<ReplicationResult> reps(3);
  for (auto& r : reps) r.average_cost = 12.5;
  const auto est = estimate_long_run_cost(reps);
  CHECK(est.mean == doctest::Approx(12.5));
  CHECK(est.ci95_lo == doctest::Approx(12.5));
  CHECK(est.ci95_hi == doctest::Approx(12.5));
  std::vector<ReplicationResult> one(1);
  CHECK_THROWS_AS(estimate_long_run_cost(one), ValidationError);
}

TEST_CASE("t-interval coverage over synthetic normal samples") {
  // 1000 meta-trials of 30 samples from a known normal; the 95% interval
  // should cover the true mean about 95% of the time.
  Philox rng(9001, 0);
  int covered = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    VecD xs;
    for (int i = 0; i < 30; ++i) {
      // Box-Muller
      const double u1 = rng.uniform();
      const double u2 = rng.uniform();
      xs.push_back(3.0 + 2.0 * std::sqrt(-2.0 * std::log(1e-300 + u1)) *
                             std::cos(6.283185307179586 * u2));
    }
    const auto ci = stats::t_interval(xs, 0.95);
    if (ci.first <= 3.0 && 3.0 <= ci.second) ++covered;
  }
  CHECK(covered > 930);
  CHECK(covered < 975);
}

TEST_SUITE_END();
