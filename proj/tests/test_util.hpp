#pragma once

// Shared fixtures: the structured systems exercised throughout the suite and
// a seeded generator of small instances whose serve polytopes have integral
// vertices, so the integer nested search and the scenario LP agree exactly.

#include <cstdint>
#include <utility>
#include <vector>

#include "ato/demand.hpp"
#include "ato/model.hpp"
#include "ato/rng.hpp"

namespace testutil {

using namespace ato;

// N system: component 0 shared by both products, component 1 only in
// product 0. `common_short` picks which component carries the shorter lead.
inline RawSystem n_system(bool common_short, double L1 = 1.0, double L2 = 1.5,
                          double h_common = 1.0, double h_specific = 0.1,
                          VecD b = {0.4, 0.5}) {
  RawSystem raw;
  raw.products = 2;
  raw.components = 2;
  raw.bom = {{1, 1}, {1, 0}};
  raw.lead_times = common_short ? VecD{L1, L2} : VecD{L2, L1};
  raw.holding_costs = {h_common, h_specific};
  raw.backlog_costs = std::move(b);
  return raw;
}

inline RawSystem w_system(bool common_short, double L1, double L2, double h1, double h2,
                          double b1, double b2) {
  RawSystem raw;
  raw.products = 2;
  raw.components = 3;
  raw.bom = {{1, 1}, {1, 0}, {0, 1}};
  raw.lead_times = common_short ? VecD{L1, L2, L2} : VecD{L2, L1, L1};
  raw.holding_costs = {1.0, h1, h2};
  raw.backlog_costs = {b1, b2};
  return raw;
}

inline RawSystem m_system(bool comp1_short, double L1, double L2, double b0, double b1,
                          double b2) {
  RawSystem raw;
  raw.products = 3;
  raw.components = 2;
  raw.bom = {{1, 1, 0}, {1, 0, 1}};
  raw.lead_times = comp1_short ? VecD{L1, L2} : VecD{L2, L1};
  raw.holding_costs = {1.0, 1.0};
  raw.backlog_costs = {b0, b1, b2};
  return raw;
}

inline RawSystem single_item(double lead, double h, double b) {
  RawSystem raw;
  raw.products = 1;
  raw.components = 1;
  raw.bom = {{1}};
  raw.lead_times = {lead};
  raw.holding_costs = {h};
  raw.backlog_costs = {b};
  return raw;
}

struct RandomInstance {
  RawSystem raw;
  VecD rates;
  std::int64_t clamp;
};

// Families: single-product chains, shared-component fan-outs, their
// transpose, and consecutive-ones rows. All have integral serve vertices.
inline RandomInstance random_instance(std::uint64_t seed, std::uint64_t stream) {
  Philox rng(seed, stream);
  RandomInstance inst;
  RawSystem& raw = inst.raw;
  const int kind = static_cast<int>(rng.next_u32() % 4);
  if (kind == 0) {
    raw.products = 1;
    raw.components = 1 + static_cast<int>(rng.next_u32() % 2);
    raw.bom.assign(raw.components, VecD{0.0});
    for (int j = 0; j < raw.components; ++j)
      raw.bom[j][0] = 1.0 + static_cast<double>(rng.next_u32() % 2);
  } else if (kind == 1) {
    // common component plus a specific for a subset of products
    raw.products = 2 + static_cast<int>(rng.next_u32() % 2);
    std::vector<int> with_specific;
    for (int i = 0; i < raw.products; ++i)
      if (rng.uniform() < 0.7) with_specific.push_back(i);
    raw.components = 1 + static_cast<int>(with_specific.size());
    raw.bom.assign(raw.components, VecD(raw.products, 0.0));
    for (int i = 0; i < raw.products; ++i) raw.bom[0][i] = 1.0;
    for (std::size_t s = 0; s < with_specific.size(); ++s)
      raw.bom[1 + s][with_specific[s]] = 1.0;
  } else if (kind == 2) {
    // hub product spanning every component, a partner per component
    raw.components = 2;
    raw.products = 3;
    raw.bom = {{1, 1, 0}, {1, 0, 1}};
  } else {
    // consecutive-ones rows over three products
    raw.products = 3;
    raw.components = 3;
    raw.bom = {{1, 1, 0}, {0, 1, 1}, {1, 1, 1}};
  }

  const int n = raw.components;
  raw.lead_times.assign(n, 0.0);
  raw.holding_costs.assign(n, 0.0);
  // Consecutive-ones rows have no closed serve form; the per-atom lp is only
  // affordable outside the two-class recursion.
  const bool two_classes = kind != 3 && n > 1 && rng.uniform() < 0.7;
  const double L1 = 0.4 + rng.uniform();
  const double L2 = L1 * (1.3 + rng.uniform());
  for (int j = 0; j < n; ++j) {
    raw.lead_times[j] = (two_classes && j + 1 == n) ? L2 : L1;
    raw.holding_costs[j] = 0.2 + rng.uniform() * 2.0;
  }
  raw.backlog_costs.assign(raw.products, 0.0);
  for (int i = 0; i < raw.products; ++i)
    raw.backlog_costs[i] = 0.3 + rng.uniform() * 4.0;

  inst.rates.assign(raw.products, 0.0);
  for (int i = 0; i < raw.products; ++i) inst.rates[i] = 0.4 + rng.uniform() * 1.6;
  inst.clamp = 2 + static_cast<std::int64_t>(rng.next_u32() % 3);
  // Cap the scenario LP at what the dense simplex handles comfortably.
  double leaves = 1.0;
  const int classes = two_classes ? 2 : 1;
  for (int k = 0; k < classes; ++k)
    for (int i = 0; i < raw.products; ++i) leaves *= static_cast<double>(inst.clamp + 1);
  while (leaves * (raw.products + n) > 5000.0 && inst.clamp > 2) {
    --inst.clamp;
    leaves = 1.0;
    for (int k = 0; k < classes; ++k)
      for (int i = 0; i < raw.products; ++i) leaves *= static_cast<double>(inst.clamp + 1);
  }
  return inst;
}

}  // namespace testutil
