#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "ato/demand.hpp"

using namespace ato;

TEST_SUITE_BEGIN("demand");

TEST_CASE("zero-rate model yields an empty path") {
  const auto model = DemandModel::independent_poisson({0.0, 0.0});
  const auto path = sample_path(model, -1.5, 100.0, 7);
  CHECK(path.times.empty());
  CHECK(path.window(0.0, 50.0) == VecI{0, 0});
}

TEST_CASE("sample mean of unit windows matches the rate") {
  const auto model = DemandModel::independent_poisson({5.0, 5.0});
  const auto path = sample_path(model, 0.0, 100000.0, 42);
  VecI total = path.window(0.0, 100000.0);
  for (int i = 0; i < 2; ++i) {
    const double mean = static_cast<double>(total[i]) / 100000.0;
    const double se = std::sqrt(5.0 / 100000.0);
    CHECK(std::fabs(mean - 5.0) < 3.0 * se);
  }
}

TEST_CASE("fixed seed reproduces the path exactly") {
  const auto model = DemandModel::independent_poisson({2.0, 3.0});
  const auto a = sample_path(model, -1.0, 500.0, 99, 4);
  const auto b = sample_path(model, -1.0, 500.0, 99, 4);
  REQUIRE(a.times.size() == b.times.size());
  CHECK(a.times == b.times);
  for (std::size_t t = 0; t < a.sizes.size(); ++t) CHECK(a.sizes[t] == b.sizes[t]);
  const auto c = sample_path(model, -1.0, 500.0, 100, 4);
  CHECK(a.times != c.times);
}

TEST_CASE("window queries on a hand-built path") {
  DemandPath path;
  path.t_start = -1.0;
  path.t_end = 2.0;
  path.num_products = 2;
  path.times = {0.2, 0.7};
  path.sizes = {{1, 0}, {0, 2}};
  path.cumulative = {{0, 0}, {1, 0}, {1, 2}};
  CHECK(window_demand(path, 0.0, 0.5) == VecI{1, 0});
  CHECK(window_demand(path, 0.0, 1.0) == VecI{1, 2});
  CHECK(window_demand(path, 0.3, 0.4) == VecI{0, 0});
  // Half-open semantics: an arrival at t2 counts, at t1 it does not.
  CHECK(window_demand(path, 0.2, 0.7) == VecI{0, 2});
  CHECK_THROWS_AS(window_demand(path, 0.5, 0.5), ValidationError);
}

TEST_CASE("window additivity over a split point") {
  const auto model = DemandModel::independent_poisson({1.5, 2.5});
  const auto path = sample_path(model, -2.0, 200.0, 5);
  for (double t1 : {-1.0, 0.0, 3.7, 50.0}) {
    for (double t3 : {120.0, 199.0}) {
      const double t2 = 0.5 * (t1 + t3);
      VecI lhs = path.window(t1, t3);
      VecI sum = path.window(t1, t2);
      iadd(sum, path.window(t2, t3));
      CHECK(lhs == sum);
    }
  }
}

TEST_CASE("truncated poisson window pmf carries the tail at the clamp") {
  const auto model = DemandModel::independent_poisson({5.0, 5.0});
  const auto pmf = window_distribution(model, 0.5, 4);
  REQUIRE(pmf.product_form());
  const VecD& mg = pmf.marginals()[0];
  REQUIRE(mg.size() == 5);
  // P(D = 4) equals the upper tail 1 - sum_{r<=3} e^{-2.5} 2.5^r / r!.
  double below = 0.0, term = std::exp(-2.5);
  for (int r = 0; r <= 3; ++r) {
    CHECK(mg[r] == doctest::Approx(term).epsilon(1e-12));
    below += term;
    term *= 2.5 / (r + 1);
  }
  CHECK(mg[4] == doctest::Approx(1.0 - below).epsilon(1e-12));
  CHECK(pmf.total_mass() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clamp zero and duration zero give a point mass at the origin") {
  const auto model = DemandModel::independent_poisson({5.0, 5.0});
  const auto p0 = window_distribution(model, 0.5, 0);
  CHECK(p0.atoms().size() == 1);
  CHECK(p0.atoms()[0].first == VecI{0, 0});
  CHECK(p0.atoms()[0].second == doctest::Approx(1.0));
  const auto p1 = window_distribution(model, 0.0, 6);
  CHECK(p1.marginals()[0][0] == doctest::Approx(1.0));
  CHECK(p1.mean()[0] == doctest::Approx(0.0));
}

TEST_CASE("clamp mass equals the exact upper tail") {
  const auto model = DemandModel::independent_poisson({3.0});
  for (std::int64_t M : {1, 3, 8, 15}) {
    const auto pmf = window_distribution(model, 1.0, M);
    double cdf_below = 0.0, term = std::exp(-3.0);
    for (std::int64_t r = 0; r < M; ++r) {
      cdf_below += term;
      term *= 3.0 / static_cast<double>(r + 1);
    }
    CHECK(pmf.marginals()[0][M] == doctest::Approx(1.0 - cdf_below).epsilon(1e-12));
  }
}

TEST_CASE("compound pmf via convolution matches the poisson special case") {
  // A joint pmf putting unit mass on e_0 with order rate 4 is a unit Poisson
  // stream; the convolution path must agree with the closed form.
  const auto compound = DemandModel::joint_pmf(4.0, {{{1}, 1.0}});
  const auto direct = DemandModel::independent_poisson({4.0});
  const auto a = window_distribution(compound, 0.75, 9);
  const auto b = window_distribution(direct, 0.75, 9);
  for (int r = 0; r <= 9; ++r)
    CHECK(a.marginals()[0][r] == doctest::Approx(b.marginals()[0][r]).epsilon(1e-9));
}

TEST_CASE("batched compound poisson window pmf") {
  // Orders of size 2: P(D = 2k) = Poisson(lambda t) at k.
  const auto model = DemandModel::joint_pmf(2.0, {{{2}, 1.0}});
  const auto pmf = window_distribution(model, 1.0, 11);
  double term = std::exp(-2.0);
  for (int k = 0; k <= 5; ++k) {
    CHECK(pmf.marginals()[0][2 * k] == doctest::Approx(term).epsilon(1e-10));
    if (2 * k + 1 <= 10) CHECK(pmf.marginals()[0][2 * k + 1] == doctest::Approx(0.0));
    term *= 2.0 / (k + 1);
  }
}

TEST_CASE("moments of independent poisson demand") {
  const auto model = DemandModel::independent_poisson({25.0, 25.0});
  const auto mo = moments(model, 1.0);
  CHECK(mo.mean == VecD{25.0, 25.0});
  CHECK(mo.covariance[0][0] == doctest::Approx(25.0));
  CHECK(mo.covariance[1][1] == doctest::Approx(25.0));
  CHECK(mo.covariance[0][1] == doctest::Approx(0.0));
  const auto z = moments(model, 0.0);
  CHECK(z.mean == VecD{0.0, 0.0});
  CHECK(z.covariance[0][0] == doctest::Approx(0.0));
}

TEST_CASE("moments of a joint size pmf") {
  const auto model = DemandModel::joint_pmf(2.0, {{{1, 1}, 1.0}});
  const auto mo = moments(model, 3.0);
  CHECK(mo.mean == VecD{6.0, 6.0});
  CHECK(mo.covariance[0][1] == doctest::Approx(6.0));
}

TEST_CASE("stationarity smoke test over shifted windows") {
  // Kolmogorov-Smirnov distance between D(0,1] and D(t,t+1] samples across
  // seeded replications stays below the 0.1% critical value.
  const auto model = DemandModel::independent_poisson({4.0});
  const int reps = 400;
  std::vector<double> at0, at7;
  for (int r = 0; r < reps; ++r) {
    const auto path = sample_path(model, -0.5, 9.0, 1234, r);
    at0.push_back(static_cast<double>(path.window(0.0, 1.0)[0]));
    at7.push_back(static_cast<double>(path.window(7.3, 8.3)[0]));
  }
  std::sort(at0.begin(), at0.end());
  std::sort(at7.begin(), at7.end());
  double ks = 0.0;
  for (double q = 0; q <= 20; q += 1.0) {
    const double f0 = (std::upper_bound(at0.begin(), at0.end(), q) - at0.begin()) / double(reps);
    const double f7 = (std::upper_bound(at7.begin(), at7.end(), q) - at7.begin()) / double(reps);
    ks = std::max(ks, std::fabs(f0 - f7));
  }
  const double crit = 1.95 * std::sqrt(2.0 / reps);  // alpha ~ 0.001
  CHECK(ks < crit);
}

TEST_CASE("size pmf validation") {
  CHECK_THROWS_AS(DemandModel::joint_pmf(1.0, {{{0, 0}, 1.0}}), ValidationError);
  CHECK_THROWS_AS(DemandModel::joint_pmf(1.0, {{{1, 0}, 0.5}}), ValidationError);
  CHECK_THROWS_AS(DemandModel::independent_poisson({-1.0}), ValidationError);
}

TEST_SUITE_END();
