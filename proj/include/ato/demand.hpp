#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ato/common.hpp"

namespace ato {

class DemandModel;
struct DemandPath;
DemandPath sample_path(const DemandModel& model, double t_start, double t_end,
                       std::uint64_t seed, std::uint64_t stream);

// Compound Poisson demand. Either independent unit-size Poisson streams per
// product (merged into one compound process) or a finite joint pmf over
// integer order-size vectors with no mass at the zero vector.
class DemandModel {
 public:
  static DemandModel independent_poisson(const VecD& rates);
  static DemandModel joint_pmf(double order_rate,
                               std::vector<std::pair<VecI, double>> size_atoms);

  int num_products() const { return m_; }
  double order_rate() const { return order_rate_; }
  bool is_independent_poisson() const { return independent_; }
  const VecD& product_rates() const { return rates_; }  // independent mode only

  // mean_i of demand per unit time = order_rate * E[S_i].
  VecD mean_rate() const;

  const std::vector<std::pair<VecI, double>>& size_atoms() const { return size_atoms_; }

 private:
  int m_ = 0;
  bool independent_ = true;
  double order_rate_ = 0.0;
  VecD rates_;
  std::vector<std::pair<VecI, double>> size_atoms_;  // normalized pmf
  std::vector<double> size_cdf_;
  friend DemandPath sample_path(const DemandModel&, double, double, std::uint64_t,
                                std::uint64_t);
};

// A realized arrival history over [t_start, t_end], queryable by window.
struct DemandPath {
  double t_start = 0.0;
  double t_end = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<double> times;        // strictly increasing
  std::vector<VecI> sizes;          // per arrival
  std::vector<VecI> cumulative;     // cumulative[i] = sum of sizes[0..i-1]
  int num_products = 0;

  // Demand over the half-open window (t1, t2].
  VecI window(double t1, double t2) const;
  // Index of the first arrival with time > t.
  std::size_t first_after(double t) const;
};

inline DemandPath sample_path(const DemandModel& model, double t_start, double t_end,
                              std::uint64_t seed) {
  return sample_path(model, t_start, t_end, seed, 0);
}

VecI window_demand(const DemandPath& path, double t1, double t2);

// Exact pmf of window demand clamped componentwise, with the clamp level
// carrying the whole upper tail. Product form is kept when the model is a
// set of independent streams.
class WindowPmf {
 public:
  double duration() const { return duration_; }
  const VecI& clamp_levels() const { return clamp_; }
  bool product_form() const { return product_form_; }
  int num_products() const { return static_cast<int>(clamp_.size()); }

  // Per-product pmf over 0..clamp[i]; in product form the joint pmf is the
  // product of these. For joint mode these are true marginals.
  const std::vector<VecD>& marginals() const { return marginals_; }

  // Explicit atom list (built on first use for product-form pmfs).
  const std::vector<std::pair<VecI, double>>& atoms() const;

  double support_size() const;  // product of per-product support sizes
  VecD mean() const;            // truncated mean
  double total_mass() const;

  // Explicit atom list (e.g. equiprobable sampled scenarios).
  static WindowPmf from_atoms(double duration, const VecI& clamp,
                              std::vector<std::pair<VecI, double>> atoms);

  friend WindowPmf window_distribution_clamped(const DemandModel&, double, const VecI&);

 private:
  double duration_ = 0.0;
  VecI clamp_;
  bool product_form_ = true;
  std::vector<VecD> marginals_;
  mutable std::vector<std::pair<VecI, double>> atoms_;
  mutable bool atoms_built_ = false;
};

WindowPmf window_distribution(const DemandModel& model, double duration, std::int64_t M);
WindowPmf window_distribution_clamped(const DemandModel& model, double duration,
                                      const VecI& clamp);

// Default clamp level per product for a window: ceil(mean + 6*sqrt(mean)).
VecI default_clamp(const DemandModel& model, double duration);

struct Moments {
  VecD mean;
  std::vector<VecD> covariance;
};

Moments moments(const DemandModel& model, double duration);

}  // namespace ato
