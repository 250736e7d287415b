#include "ato/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ato {

std::int64_t round_half_even(double x) {
  // nearbyint honors the default round-to-nearest-even mode.
  return static_cast<std::int64_t>(std::nearbyint(x));
}

VecI round_half_even(const VecD& v) {
  VecI out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = round_half_even(v[i]);
  return out;
}

VecI AtoSystem::apply_class(int k, const VecI& x) const {
  VecI out(class_size(k), 0);
  for (int j = class_begin(k); j < class_end(k); ++j)
    out[j - class_begin(k)] = idot(bom_[j], x);
  return out;
}

VecD AtoSystem::apply_class(int k, const VecD& x) const {
  VecD out(class_size(k), 0.0);
  for (int j = class_begin(k); j < class_end(k); ++j)
    out[j - class_begin(k)] = dot(x, bom_[j]);
  return out;
}

AtoSystem validate_system(const RawSystem& raw) {
  const int m = raw.products;
  const int n = raw.components;
  if (m <= 0 || n <= 0)
    throw ValidationError("system must have at least one product and one component");
  if (static_cast<int>(raw.bom.size()) != n)
    throw ValidationError("bom row count does not match component count");

  std::vector<VecI> bom(n);
  for (int j = 0; j < n; ++j) {
    if (static_cast<int>(raw.bom[j].size()) != m)
      throw ValidationError("bom column count does not match product count");
    bom[j].resize(m);
    for (int i = 0; i < m; ++i) {
      const double a = raw.bom[j][i];
      if (a < 0) throw ValidationError("negative bom entry");
      if (a != std::floor(a) || a > 1e15) throw ValidationError("non-integer bom entry");
      bom[j][i] = static_cast<std::int64_t>(a);
    }
  }

  for (int j = 0; j < n; ++j) {
    bool any = false;
    for (int i = 0; i < m; ++i) any = any || bom[j][i] > 0;
    if (!any) {
      std::ostringstream os;
      os << "unused component: bom row " << j << " is all zero";
      throw ValidationError(os.str());
    }
  }
  for (int i = 0; i < m; ++i) {
    bool any = false;
    for (int j = 0; j < n; ++j) any = any || bom[j][i] > 0;
    if (!any) {
      std::ostringstream os;
      os << "unused product: bom column " << i << " is all zero";
      throw ValidationError(os.str());
    }
  }

  // Resolve per-component lead times from either input form.
  VecD lead(n);
  if (raw.component_class.empty()) {
    if (static_cast<int>(raw.lead_times.size()) != n)
      throw ValidationError("lead time count does not match component count");
    lead = raw.lead_times;
  } else {
    const int kk = static_cast<int>(raw.lead_times.size());
    for (int k = 1; k < kk; ++k)
      if (!(raw.lead_times[k] > raw.lead_times[k - 1]))
        throw ValidationError("lead times not strictly increasing");
    if (static_cast<int>(raw.component_class.size()) != n)
      throw ValidationError("component class map size does not match component count");
    std::vector<bool> used(kk, false);
    for (int j = 0; j < n; ++j) {
      const int k = raw.component_class[j];
      if (k < 1 || k > kk) throw ValidationError("component class out of range");
      used[k - 1] = true;
      lead[j] = raw.lead_times[k - 1];
    }
    for (int k = 0; k < kk; ++k)
      if (!used[k]) throw ValidationError("empty lead time class");
  }
  for (int j = 0; j < n; ++j) {
    if (!(lead[j] > 0.0) || !std::isfinite(lead[j]))
      throw ValidationError("lead times must be positive and finite");
  }

  if (static_cast<int>(raw.holding_costs.size()) != n)
    throw ValidationError("holding cost count does not match component count");
  if (static_cast<int>(raw.backlog_costs.size()) != m)
    throw ValidationError("backlog cost count does not match product count");
  for (int j = 0; j < n; ++j)
    if (!(raw.holding_costs[j] > 0.0) || !std::isfinite(raw.holding_costs[j]))
      throw ValidationError("non-positive holding cost");
  for (int i = 0; i < m; ++i)
    if (!(raw.backlog_costs[i] > 0.0) || !std::isfinite(raw.backlog_costs[i]))
      throw ValidationError("non-positive backlog cost");

  // Stable sort components by lead time; equal lead times share a class.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return lead[a] < lead[b]; });

  AtoSystem sys;
  sys.m_ = m;
  sys.n_ = n;
  sys.bom_.resize(n);
  sys.lead_time_.resize(n);
  sys.holding_.resize(n);
  sys.original_.resize(n);
  sys.class_of_.resize(n);
  sys.backlog_ = raw.backlog_costs;

  for (int pos = 0; pos < n; ++pos) {
    const int j = order[pos];
    sys.bom_[pos] = bom[j];
    sys.lead_time_[pos] = lead[j];
    sys.holding_[pos] = raw.holding_costs[j];
    sys.original_[pos] = j;
  }

  sys.class_begin_.push_back(0);
  for (int pos = 0; pos < n; ++pos) {
    if (pos == 0 || sys.lead_time_[pos] != sys.lead_time_[pos - 1]) {
      sys.class_lead_.push_back(sys.lead_time_[pos]);
      if (pos > 0) sys.class_begin_.push_back(pos);
    }
    sys.class_of_[pos] = static_cast<int>(sys.class_lead_.size());
  }
  sys.class_begin_.push_back(n);
  sys.k_ = static_cast<int>(sys.class_lead_.size());

  sys.max_a_ = 0.0;
  sys.min_a_ = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i)
      if (sys.bom_[j][i] > 0) {
        sys.max_a_ = std::max(sys.max_a_, static_cast<double>(sys.bom_[j][i]));
        sys.min_a_ = std::min(sys.min_a_, static_cast<double>(sys.bom_[j][i]));
      }
  return sys;
}

EffectiveCosts effective_unit_cost(const AtoSystem& system) {
  EffectiveCosts ec;
  ec.c = system.backlog_costs();
  for (int j = 0; j < system.num_components(); ++j)
    for (int i = 0; i < system.num_products(); ++i)
      ec.c[i] += system.holding_cost(j) * static_cast<double>(system.bom(j, i));
  return ec;
}

}  // namespace ato
