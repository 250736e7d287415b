#include "doctest.h"

#include "ato/model.hpp"
#include "ato/rng.hpp"

using namespace ato;

namespace {

RawSystem w_system(double L0 = 1.0, double L12 = 1.5) {
  RawSystem raw;
  raw.products = 2;
  raw.components = 3;
  raw.bom = {{1, 1}, {1, 0}, {0, 1}};  // rows: common, specific 1, specific 2
  raw.lead_times = {L0, L12, L12};
  raw.holding_costs = {1, 1, 1};
  raw.backlog_costs = {4, 4};
  return raw;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("w system validates with two classes") {
  const AtoSystem sys = validate_system(w_system());
  CHECK(sys.num_products() == 2);
  CHECK(sys.num_components() == 3);
  CHECK(sys.num_classes() == 2);
  CHECK(sys.class_lead_time(1) == 1.0);
  CHECK(sys.class_lead_time(2) == 1.5);
  CHECK(sys.class_size(1) == 1);
  CHECK(sys.class_size(2) == 2);
  // Common component sorts first (shorter lead time).
  CHECK(sys.bom_row(0) == VecI{1, 1});
}

TEST_CASE("all-zero bom column is an unused product") {
  RawSystem raw = w_system();
  raw.bom = {{1, 0}, {1, 0}, {1, 0}};
  CHECK_THROWS_WITH_AS(validate_system(raw), doctest::Contains("unused product"),
                       ValidationError);
}

TEST_CASE("all-zero bom row is an unused component") {
  RawSystem raw = w_system();
  raw.bom = {{1, 1}, {0, 0}, {0, 1}};
  CHECK_THROWS_WITH_AS(validate_system(raw), doctest::Contains("unused component"),
                       ValidationError);
}

TEST_CASE("class lead time lists must be strictly increasing") {
  RawSystem raw = w_system();
  raw.lead_times = {2, 2};
  raw.component_class = {1, 2, 2};
  CHECK_THROWS_WITH_AS(validate_system(raw),
                       doctest::Contains("not strictly increasing"), ValidationError);
}

TEST_CASE("cost sign and integrality errors") {
  RawSystem raw = w_system();
  raw.holding_costs = {1, -1, 1};
  CHECK_THROWS_AS(validate_system(raw), ValidationError);
  raw = w_system();
  raw.backlog_costs = {4, 0};
  CHECK_THROWS_AS(validate_system(raw), ValidationError);
  raw = w_system();
  raw.bom[1][0] = 0.5;
  CHECK_THROWS_WITH_AS(validate_system(raw), doctest::Contains("non-integer"),
                       ValidationError);
  raw = w_system();
  raw.bom[1][0] = -1;
  CHECK_THROWS_AS(validate_system(raw), ValidationError);
}

TEST_CASE("effective cost of the w system") {
  const AtoSystem sys = validate_system(w_system());
  const EffectiveCosts ec = effective_unit_cost(sys);
  CHECK(ec.c == VecD{6, 6});
}

TEST_CASE("effective cost of a single-item system") {
  RawSystem raw;
  raw.products = 1;
  raw.components = 1;
  raw.bom = {{1}};
  raw.lead_times = {1};
  raw.holding_costs = {2};
  raw.backlog_costs = {3};
  const EffectiveCosts ec = effective_unit_cost(validate_system(raw));
  CHECK(ec.c == VecD{5});
}

TEST_CASE("effective cost of the m system") {
  RawSystem raw;
  raw.products = 3;
  raw.components = 2;
  raw.bom = {{1, 1, 0}, {1, 0, 1}};
  raw.lead_times = {1, 1.5};
  raw.holding_costs = {1, 1};
  raw.backlog_costs = {8, 3.5, 1};
  const EffectiveCosts ec = effective_unit_cost(validate_system(raw));
  CHECK(ec.c == VecD{10, 4.5, 2});
}

TEST_CASE("effective cost is linear in b and h") {
  Philox rng(2024, 1);
  for (int trial = 0; trial < 50; ++trial) {
    RawSystem raw;
    raw.products = 1 + static_cast<int>(rng.next_u32() % 3);
    raw.components = 1 + static_cast<int>(rng.next_u32() % 3);
    raw.bom.assign(raw.components, VecD(raw.products, 0.0));
    for (int j = 0; j < raw.components; ++j)
      for (int i = 0; i < raw.products; ++i) raw.bom[j][i] = rng.next_u32() % 3;
    // guarantee coverage
    for (int j = 0; j < raw.components; ++j) raw.bom[j][j % raw.products] += 1;
    for (int i = 0; i < raw.products; ++i) raw.bom[i % raw.components][i] += 1;
    raw.lead_times.assign(raw.components, 0.0);
    raw.holding_costs.assign(raw.components, 0.0);
    for (int j = 0; j < raw.components; ++j) {
      raw.lead_times[j] = 0.5 + rng.uniform() * 3.0;
      raw.holding_costs[j] = 0.1 + rng.uniform();
    }
    raw.backlog_costs.assign(raw.products, 0.0);
    for (int i = 0; i < raw.products; ++i) raw.backlog_costs[i] = 0.1 + rng.uniform() * 5;

    const AtoSystem sys = validate_system(raw);
    const VecD c1 = effective_unit_cost(sys).c;

    RawSystem scaled = raw;
    const double alpha = 2.5;
    for (auto& h : scaled.holding_costs) h *= alpha;
    for (auto& b : scaled.backlog_costs) b *= alpha;
    const VecD c2 = effective_unit_cost(validate_system(scaled)).c;
    for (int i = 0; i < raw.products; ++i)
      CHECK(c2[i] == doctest::Approx(alpha * c1[i]).epsilon(1e-12));
  }
}

TEST_CASE("validation is idempotent") {
  const AtoSystem sys = validate_system(w_system());
  RawSystem again;
  again.products = sys.num_products();
  again.components = sys.num_components();
  for (int j = 0; j < sys.num_components(); ++j) {
    VecD row;
    for (auto v : sys.bom_row(j)) row.push_back(static_cast<double>(v));
    again.bom.push_back(row);
    again.lead_times.push_back(sys.lead_time(j));
    again.holding_costs.push_back(sys.holding_cost(j));
  }
  again.backlog_costs = sys.backlog_costs();
  const AtoSystem sys2 = validate_system(again);
  CHECK(sys2.num_classes() == sys.num_classes());
  for (int j = 0; j < sys.num_components(); ++j) {
    CHECK(sys2.bom_row(j) == sys.bom_row(j));
    CHECK(sys2.lead_time(j) == sys.lead_time(j));
    CHECK(sys2.holding_cost(j) == sys.holding_cost(j));
  }
}

TEST_SUITE_END();
