#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ato/common.hpp"

namespace ato {

// Raw problem data as supplied by configs, before validation. Rows of `bom`
// are components, columns are products. Lead times come in one of two forms:
//  - per component: `lead_times` has one entry per component and
//    `component_class` is empty (classes are derived by grouping equal values);
//  - class list: `lead_times` holds the distinct values L_1 < ... < L_K and
//    `component_class` maps each component to a class in 1..K.
struct RawSystem {
  int products = 0;
  int components = 0;
  std::vector<VecD> bom;  // validated to be non-negative integers
  VecD lead_times;
  std::vector<int> component_class;
  VecD holding_costs;
  VecD backlog_costs;
};

// A validated instance. Components are re-indexed so lead times ascend and
// grouped into classes 1..K of equal lead time; all downstream code uses the
// post-sort component indices.
class AtoSystem {
 public:
  int num_products() const { return m_; }
  int num_components() const { return n_; }
  int num_classes() const { return k_; }

  // bom_row(j) = per-product usage of component j (post-sort index).
  const VecI& bom_row(int j) const { return bom_[j]; }
  std::int64_t bom(int j, int i) const { return bom_[j][i]; }

  double lead_time(int j) const { return lead_time_[j]; }
  // Distinct class lead times, ascending; class_lead_time(k) for k in 1..K.
  double class_lead_time(int k) const { return class_lead_[k - 1]; }
  int component_class(int j) const { return class_of_[j]; }
  // Components of class k occupy indices [class_begin(k), class_end(k)).
  int class_begin(int k) const { return class_begin_[k - 1]; }
  int class_end(int k) const { return class_begin_[k]; }
  int class_size(int k) const { return class_end(k) - class_begin(k); }

  double holding_cost(int j) const { return holding_[j]; }
  double backlog_cost(int i) const { return backlog_[i]; }
  const VecD& holding_costs() const { return holding_; }
  const VecD& backlog_costs() const { return backlog_; }

  // Index of component j in the original (pre-sort) input order.
  int original_index(int j) const { return original_[j]; }

  // A^k applied to a product-indexed vector, returning class-k component rows.
  VecI apply_class(int k, const VecI& x) const;
  VecD apply_class(int k, const VecD& x) const;

  double max_bom_entry() const { return max_a_; }
  double min_nonzero_bom_entry() const { return min_a_; }

  friend AtoSystem validate_system(const RawSystem& raw);

 private:
  int m_ = 0, n_ = 0, k_ = 0;
  std::vector<VecI> bom_;
  VecD lead_time_;
  VecD holding_;
  VecD backlog_;
  VecD class_lead_;
  std::vector<int> class_of_;
  std::vector<int> class_begin_;  // size K+1, class_begin_[K] == n
  std::vector<int> original_;
  double max_a_ = 0.0, min_a_ = 0.0;
};

// Checks the instance invariants (nonzero rows/columns, positive costs,
// integer usage) and returns the class-sorted system. Throws ValidationError
// naming the violated invariant otherwise.
AtoSystem validate_system(const RawSystem& raw);

// c_i = b_i + sum_k (A^k)' h^k: inventory cost removed per served unit.
struct EffectiveCosts {
  VecD c;
};

EffectiveCosts effective_unit_cost(const AtoSystem& system);

}  // namespace ato
