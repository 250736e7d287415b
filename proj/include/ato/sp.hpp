#pragma once

#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <unordered_map>
#include <vector>

#include "ato/demand.hpp"
#include "ato/lp.hpp"
#include "ato/model.hpp"

namespace ato {

// Stagewise truncated window demands for the multi-stage program. Stage k
// covers the window of length L_k - L_{k-1}; a scenario path picks one atom
// per stage and its probability is the product of the stage probabilities.
struct ScenarioTree {
  int stages = 0;
  std::vector<WindowPmf> stage_pmfs;  // index k-1 holds stage k
  double leaf_count = 0.0;
  std::int64_t m_override = 0;  // clamp policy the stages were built with
  bool sampled = false;  // true when stages hold equiprobable sampled atoms
  int saa_samples = 0;
  std::uint64_t saa_seed = 0;

  const WindowPmf& stage(int k) const { return stage_pmfs[k - 1]; }
  // E||D^1 + ... + D^k||_1 under the truncated stage pmfs.
  double mean_cumulative_l1(int k) const;
};

struct TreeOptions {
  std::int64_t m_override = 0;  // 0: per-stage-product ceil(mean + 6 sqrt(mean))
  double leaf_budget = 1e7;
  int saa_samples = 0;  // >0 replaces exact stage pmfs by sampled atoms
  std::uint64_t saa_seed = 0;
};

ScenarioTree build_scenario_tree(const AtoSystem& system, const DemandModel& model,
                                 const TreeOptions& options);
ScenarioTree build_scenario_tree(const AtoSystem& system, const DemandModel& model,
                                 std::int64_t M);

enum class Backend { kNested, kTreeLp };

struct SpSolution {
  int k = 0;
  VecD y;          // stage-k decision at the root of the solve
  VecI y_rounded;  // nearest integers, ties to even
  double objective = 0.0;
  Backend backend = Backend::kNested;
};

struct LowerBound {
  double value = 0.0;           // phi^K + b . E[Dbar], exact window mean
  double holding_term = 0.0;    // sum_k h^k . E[y^k*]
  double serve_term = 0.0;      // c . E[B*]
  double correction_term = 0.0; // -sum_k [(A^k)' h^k] . E[Dbar]
  double decomposition = 0.0;   // sum of the three terms above
  bool sampled = false;
};

struct IntegerBox {
  VecI lo;
  VecI hi;
};

// Holding and serve costs with deterministic tie-breaking offsets applied;
// c is derived from the perturbed h and b so ties cannot reappear.
struct PerturbedCosts {
  std::vector<VecD> h;  // per class
  VecD b;
  VecD c;
  double epsilon = 0.0;
};

PerturbedCosts make_perturbed_costs(const AtoSystem& system, double epsilon);

// Last-stage serve problem: given component capacities u and accumulated
// demand xbar, the residual value -max{ c.z : z <= xbar, A z <= u }. Closed
// forms cover single-product chains, shared-component fan-outs (one row with
// multiple users, all other rows dedicated) and their transpose; anything
// else goes through the lp solver. The closed forms are validated against
// the lp route in the test suite.
class ServeEvaluator {
 public:
  ServeEvaluator(std::vector<VecI> rows, VecD costs);

  double value(const VecD& caps, const VecD& xbar, VecD* z_out = nullptr) const;

  // E over x + D with D from explicit atoms.
  double expected_atoms(const std::vector<std::pair<VecI, double>>& atoms,
                        const VecI& x, const VecD& caps, VecD* ez) const;

  // O(support) expectation for product-form pmfs; only when separable().
  bool separable(const WindowPmf& pmf) const;
  double expected(const WindowPmf& pmf, const VecI& x, const VecD& caps, VecD* ez) const;

  int num_products() const { return m_; }

 private:
  enum class Form { kChain, kStar, kTransposeStar, kGeneric };
  double value_chain(const VecD& caps, const VecD& xbar, VecD* z) const;
  double value_star(const VecD& caps, const VecD& xbar, VecD* z) const;
  double value_tstar(const VecD& caps, const VecD& xbar, VecD* z) const;
  double value_lp(const VecD& caps, const VecD& xbar, VecD* z) const;
  double expected_separable(const WindowPmf& pmf, const VecI& x, const VecD& caps,
                            VecD* ez) const;

  std::vector<VecI> rows_;
  VecD c_;
  int m_ = 0;
  int n_ = 0;
  Form form_ = Form::kGeneric;
  // star structure
  int common_row_ = -1;
  std::vector<std::vector<int>> specific_rows_;  // per product
  std::vector<int> star_users_;                  // products on the common row
  // transpose-star structure
  int hub_ = -1;
  std::vector<int> coupled_row_of_;  // per product, row shared with the hub
  std::vector<int> hub_only_rows_;
};

struct SpOptions {
  double epsilon = 1e-9;  // tie-breaking perturbation scale
  std::size_t memo_capacity = 1u << 20;
  long lp_iteration_limit = 1000000;
  int max_box_widenings = 12;
};

struct SpStats {
  long box_widenings = 0;  // optimum met the search box edge and it grew
  long stage_solves = 0;
  long memo_hits = 0;
};

// Solves the stagewise program over a scenario tree. Two routes: a nested
// integer convex search with memoization (default), and the monolithic
// scenario LP; they cross-validate each other in tests.
class SpSolver {
 public:
  SpSolver(const AtoSystem& system, const ScenarioTree& tree, SpOptions options = {});

  // y_upstream[l - k - 1] holds y^l for l = k+1..K.
  SpSolution solve_stage(int k, const std::vector<VecD>& y_upstream, const VecI& x,
                         Backend backend);

  LowerBound lower_bound(Backend backend);

  double two_stage_identical_bound();

  IntegerBox solution_box(int k, const std::vector<VecD>& y_upstream, const VecI& x) const;

  lp::LpProblem build_stage_lp(int k, const std::vector<VecD>& y_upstream, const VecI& x,
                               bool perturbed = false) const;

  const SpStats& stats() const { return stats_; }
  const PerturbedCosts& costs() const { return costs_; }
  const ServeEvaluator& serve() const { return serve_; }
  const DemandModel* demand_model() const { return model_; }
  void set_demand_model(const DemandModel* model) { model_ = model; }

 private:
  friend struct NestedAccess;
  struct StagePoint {
    VecI y;
    double value;
  };

  StagePoint minimize_stage(int k, VecI& up_flat, const VecI& x);
  double stage_objective(int k, VecI& up_flat, const VecI& x, const VecI& y);
  double leaf_expectation(const VecI& up_all, const VecI& x, VecD* ez) const;
  VecD caps_from_flat(const VecI& up_all) const;
  IntegerBox box_for(int k, const VecI& up_flat, const VecI& x) const;
  std::int64_t minimize_coordinate(const std::function<double(std::int64_t)>& f,
                                   std::int64_t lo, std::int64_t hi, std::int64_t start) const;

  void decomposition_walk(int k, VecI& up_flat, const VecI& x, double prob,
                          VecD& ey_h, VecD& eb);

  const AtoSystem& sys_;
  const ScenarioTree& tree_;
  const DemandModel* model_ = nullptr;  // optional, for exact window means
  SpOptions opt_;
  PerturbedCosts costs_;
  ServeEvaluator serve_;
  std::vector<VecD> pert_stage_probs_;  // tree-lp objective probabilities
  SpStats stats_;

  struct KeyHash {
    std::size_t operator()(const VecI& key) const;
  };
  using MemoMap = std::unordered_map<VecI, std::pair<StagePoint, std::list<VecI>::iterator>, KeyHash>;
  MemoMap memo_;
  std::list<VecI> lru_;
  void memo_put(const VecI& key, const StagePoint& v);
  const StagePoint* memo_get(const VecI& key);
};

// Convenience wrappers matching the operation-level interface.
SpSolution solve_stage(const AtoSystem& system, const ScenarioTree& tree, int k,
                       const std::vector<VecD>& y_upstream, const VecI& x, Backend backend);
LowerBound lower_bound(const AtoSystem& system, const DemandModel& model, std::int64_t M,
                       Backend backend);
double two_stage_identical_bound(const AtoSystem& system, const DemandModel& model,
                                 std::int64_t M);

}  // namespace ato
