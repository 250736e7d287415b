#include "ato/sp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ato/rng.hpp"

namespace ato {

namespace {
constexpr double kInfD = std::numeric_limits<double>::infinity();
}

double ScenarioTree::mean_cumulative_l1(int k) const {
  double s = 0.0;
  for (int l = 1; l <= k; ++l) {
    const VecD mu = stage(l).mean();
    for (double v : mu) s += v;
  }
  return s;
}

ScenarioTree build_scenario_tree(const AtoSystem& system, const DemandModel& model,
                                 const TreeOptions& options) {
  if (model.num_products() != system.num_products())
    throw ValidationError("demand model product count does not match the system");
  ScenarioTree tree;
  tree.stages = system.num_classes();
  tree.leaf_count = 1.0;
  Philox saa_rng(options.saa_seed, 0x5AA);
  for (int k = 1; k <= tree.stages; ++k) {
    const double duration =
        system.class_lead_time(k) - (k > 1 ? system.class_lead_time(k - 1) : 0.0);
    VecI clamp = options.m_override > 0 ? VecI(model.num_products(), options.m_override)
                                        : default_clamp(model, duration);
    if (options.saa_samples > 0) {
      // Equiprobable sampled stage scenarios in place of the exact pmf.
      std::vector<std::pair<VecI, double>> atoms;
      const double w = 1.0 / options.saa_samples;
      const auto& sizes = model.size_atoms();
      for (int s = 0; s < options.saa_samples; ++s) {
        VecI d(model.num_products(), 0);
        if (model.order_rate() > 0.0 && duration > 0.0) {
          double t = saa_rng.exponential(model.order_rate());
          while (t <= duration) {
            const double u = saa_rng.uniform();
            double acc = 0.0;
            std::size_t pick = sizes.size() - 1;
            for (std::size_t a = 0; a < sizes.size(); ++a) {
              acc += sizes[a].second;
              if (u <= acc) {
                pick = a;
                break;
              }
            }
            iadd(d, sizes[pick].first);
            t += saa_rng.exponential(model.order_rate());
          }
        }
        for (int i = 0; i < model.num_products(); ++i) d[i] = std::min(d[i], clamp[i]);
        atoms.emplace_back(std::move(d), w);
      }
      tree.stage_pmfs.push_back(WindowPmf::from_atoms(duration, clamp, std::move(atoms)));
      tree.sampled = true;
    } else {
      tree.stage_pmfs.push_back(window_distribution_clamped(model, duration, clamp));
    }
    tree.leaf_count *= static_cast<double>(tree.stage_pmfs.back().atoms().size());
    if (tree.leaf_count > options.leaf_budget) {
      std::ostringstream os;
      os << "scenario tree needs more than " << options.leaf_budget
         << " leaves; use the nested backend or sampled (saa) stage scenarios";
      throw SolverError(os.str());
    }
  }
  tree.m_override = options.m_override;
  tree.saa_samples = options.saa_samples;
  tree.saa_seed = options.saa_seed;
  return tree;
}

ScenarioTree build_scenario_tree(const AtoSystem& system, const DemandModel& model,
                                 std::int64_t M) {
  TreeOptions opt;
  opt.m_override = M;
  return build_scenario_tree(system, model, opt);
}

PerturbedCosts make_perturbed_costs(const AtoSystem& system, double epsilon) {
  PerturbedCosts pc;
  pc.epsilon = epsilon;
  VecD h_flat(system.num_components());
  for (int j = 0; j < system.num_components(); ++j) h_flat[j] = system.holding_cost(j);
  auto ph = lp::perturb_costs(h_flat, {}, epsilon, 0);
  auto pb = lp::perturb_costs(system.backlog_costs(), {}, epsilon, ph.next_prime_index);
  pc.b = pb.costs;
  pc.h.resize(system.num_classes());
  for (int k = 1; k <= system.num_classes(); ++k) {
    pc.h[k - 1].assign(ph.costs.begin() + system.class_begin(k),
                       ph.costs.begin() + system.class_end(k));
  }
  pc.c = pc.b;
  for (int j = 0; j < system.num_components(); ++j)
    for (int i = 0; i < system.num_products(); ++i)
      pc.c[i] += ph.costs[j] * static_cast<double>(system.bom(j, i));
  return pc;
}

// ---------------------------------------------------------------------------
// ServeEvaluator

ServeEvaluator::ServeEvaluator(std::vector<VecI> rows, VecD costs)
    : rows_(std::move(rows)), c_(std::move(costs)) {
  n_ = static_cast<int>(rows_.size());
  m_ = static_cast<int>(c_.size());
  for (const auto& r : rows_)
    if (static_cast<int>(r.size()) != m_) throw ValidationError("ragged serve rows");

  bool zero_one = true;
  for (const auto& r : rows_)
    for (auto a : r) zero_one = zero_one && (a == 0 || a == 1);

  if (m_ == 1) {
    form_ = Form::kChain;
    return;
  }

  if (zero_one) {
    // Fan-out: at most one row with several users, the rest dedicated.
    int common = -1;
    bool star = true;
    specific_rows_.assign(m_, {});
    for (int j = 0; j < n_ && star; ++j) {
      int users = 0, user = -1;
      for (int i = 0; i < m_; ++i)
        if (rows_[j][i] > 0) {
          ++users;
          user = i;
        }
      if (users == 1) {
        specific_rows_[user].push_back(j);
      } else if (common < 0) {
        common = j;
      } else {
        star = false;
      }
    }
    if (star) {
      form_ = Form::kStar;
      common_row_ = common;
      star_users_.clear();
      if (common >= 0)
        for (int i = 0; i < m_; ++i)
          if (rows_[common][i] > 0) star_users_.push_back(i);
      return;
    }

    // Transpose fan-out: one product spans several rows, each of its rows
    // shared with at most one dedicated partner.
    int hub = -1;
    bool tstar = true;
    for (int i = 0; i < m_ && tstar; ++i) {
      int used = 0;
      for (int j = 0; j < n_; ++j) used += rows_[j][i] > 0;
      if (used >= 2) {
        if (hub < 0)
          hub = i;
        else
          tstar = false;
      }
    }
    if (tstar && hub >= 0) {
      coupled_row_of_.assign(m_, -1);
      specific_rows_.assign(m_, {});
      hub_only_rows_.clear();
      for (int j = 0; j < n_ && tstar; ++j) {
        std::vector<int> users;
        for (int i = 0; i < m_; ++i)
          if (rows_[j][i] > 0) users.push_back(i);
        if (users.size() == 1) {
          if (users[0] == hub)
            hub_only_rows_.push_back(j);
          else
            specific_rows_[users[0]].push_back(j);
        } else if (users.size() == 2 && (users[0] == hub || users[1] == hub)) {
          const int other = users[0] == hub ? users[1] : users[0];
          if (coupled_row_of_[other] >= 0)
            tstar = false;
          else
            coupled_row_of_[other] = j;
        } else {
          tstar = false;
        }
      }
      if (tstar) {
        form_ = Form::kTransposeStar;
        hub_ = hub;
        return;
      }
    }
  }
  form_ = Form::kGeneric;
}

double ServeEvaluator::value(const VecD& caps, const VecD& xbar, VecD* z_out) const {
  switch (form_) {
    case Form::kChain:
      return value_chain(caps, xbar, z_out);
    case Form::kStar:
      return value_star(caps, xbar, z_out);
    case Form::kTransposeStar:
      return value_tstar(caps, xbar, z_out);
    default:
      return value_lp(caps, xbar, z_out);
  }
}

double ServeEvaluator::value_chain(const VecD& caps, const VecD& xbar, VecD* z) const {
  double cap = xbar[0];
  for (int j = 0; j < n_; ++j)
    if (rows_[j][0] > 0) cap = std::min(cap, caps[j] / static_cast<double>(rows_[j][0]));
  if (z) (*z)[0] = cap;
  return -c_[0] * cap;
}

double ServeEvaluator::value_star(const VecD& caps, const VecD& xbar, VecD* z) const {
  double served_value = 0.0;
  double shared_load = 0.0;
  int cheapest = -1;
  for (int i = 0; i < m_; ++i) {
    double a = xbar[i];
    for (int j : specific_rows_[i]) a = std::min(a, caps[j]);
    served_value += c_[i] * a;
    if (z) (*z)[i] = a;
    if (common_row_ >= 0 && rows_[common_row_][i] > 0) {
      shared_load += a;
      if (cheapest < 0 || c_[i] < c_[cheapest]) cheapest = i;
    }
  }
  if (cheapest >= 0) {
    const double shortfall = std::max(0.0, shared_load - caps[common_row_]);
    served_value -= c_[cheapest] * shortfall;
    if (z) (*z)[cheapest] -= shortfall;
  }
  return -served_value;
}

double ServeEvaluator::value_tstar(const VecD& caps, const VecD& xbar, VecD* z) const {
  // The hub quantity traces a concave piecewise-linear profile; its optimum
  // sits at a breakpoint or at the hub's own cap.
  double zcap = xbar[hub_];
  for (int j : hub_only_rows_) zcap = std::min(zcap, caps[j]);
  VecD b(m_, 0.0);
  for (int i = 0; i < m_; ++i) {
    if (i == hub_) continue;
    b[i] = xbar[i];
    for (int j : specific_rows_[i]) b[i] = std::min(b[i], caps[j]);
  }
  std::vector<double> candidates{zcap};
  for (int i = 0; i < m_; ++i)
    if (i != hub_ && coupled_row_of_[i] >= 0)
      candidates.push_back(std::min(caps[coupled_row_of_[i]] - b[i], zcap));
  double best = -kInfD, best_z = zcap;
  for (double zh : candidates) {
    double v = c_[hub_] * zh;
    for (int i = 0; i < m_; ++i) {
      if (i == hub_) continue;
      double zi = b[i];
      if (coupled_row_of_[i] >= 0) zi = std::min(zi, caps[coupled_row_of_[i]] - zh);
      v += c_[i] * zi;
    }
    if (v > best) {
      best = v;
      best_z = zh;
    }
  }
  if (z) {
    (*z)[hub_] = best_z;
    for (int i = 0; i < m_; ++i) {
      if (i == hub_) continue;
      double zi = b[i];
      if (coupled_row_of_[i] >= 0) zi = std::min(zi, caps[coupled_row_of_[i]] - best_z);
      (*z)[i] = zi;
    }
  }
  return -best;
}

double ServeEvaluator::value_lp(const VecD& caps, const VecD& xbar, VecD* z) const {
  lp::LpProblem p;
  for (int i = 0; i < m_; ++i) p.add_variable(-c_[i]);
  for (int i = 0; i < m_; ++i) {
    const int r = p.add_row(lp::RowSense::kLe, xbar[i]);
    p.set(r, i, 1.0);
  }
  for (int j = 0; j < n_; ++j) {
    const int r = p.add_row(lp::RowSense::kLe, caps[j]);
    for (int i = 0; i < m_; ++i)
      if (rows_[j][i] != 0) p.set(r, i, static_cast<double>(rows_[j][i]));
  }
  const auto sol = lp::solve(p);
  if (sol.status != lp::LpStatus::kOptimal)
    throw SolverError("serve subproblem is not optimal: costs must be positive");
  if (z) *z = sol.x;
  return sol.objective;
}

double ServeEvaluator::expected_atoms(const std::vector<std::pair<VecI, double>>& atoms,
                                      const VecI& x, const VecD& caps, VecD* ez) const {
  double total = 0.0;
  VecD xbar(m_);
  VecD z(m_);
  if (ez) ez->assign(m_, 0.0);
  for (const auto& [d, p] : atoms) {
    for (int i = 0; i < m_; ++i) xbar[i] = static_cast<double>(x[i] + d[i]);
    total += p * value(caps, xbar, ez ? &z : nullptr);
    if (ez)
      for (int i = 0; i < m_; ++i) (*ez)[i] += p * z[i];
  }
  return total;
}

bool ServeEvaluator::separable(const WindowPmf& pmf) const {
  if (!pmf.product_form()) return false;
  if (form_ == Form::kChain) return true;
  if (form_ != Form::kStar) return false;
  return star_users_.size() <= 2;
}

namespace {

// Tail tables for Y = min(x + D, v): values are nondecreasing in the demand
// atom, so E[(Y - w)^+] is a suffix lookup.
struct ClippedVar {
  VecD val;
  VecD tail_p;
  VecD tail_v;
  double mean = 0.0;

  ClippedVar(const VecD& marginal, std::int64_t x, double v) {
    const std::size_t s = marginal.size();
    val.resize(s);
    for (std::size_t d = 0; d < s; ++d)
      val[d] = std::min(static_cast<double>(x) + static_cast<double>(d), v);
    tail_p.assign(s + 1, 0.0);
    tail_v.assign(s + 1, 0.0);
    for (std::size_t d = s; d-- > 0;) {
      tail_p[d] = tail_p[d + 1] + marginal[d];
      tail_v[d] = tail_v[d + 1] + marginal[d] * val[d];
    }
    mean = tail_v[0];
  }

  double excess(double w) const {  // E[(Y - w)^+]
    const std::size_t s = val.size();
    const std::size_t lo = std::upper_bound(val.begin(), val.end(), w) - val.begin();
    if (lo >= s) return 0.0;
    return tail_v[lo] - w * tail_p[lo];
  }
};

}  // namespace

double ServeEvaluator::expected_separable(const WindowPmf& pmf, const VecI& x,
                                          const VecD& caps, VecD* ez) const {
  if (form_ == Form::kChain) {
    double v = kInfD;
    for (int j = 0; j < n_; ++j)
      if (rows_[j][0] > 0) v = std::min(v, caps[j] / static_cast<double>(rows_[j][0]));
    ClippedVar y(pmf.marginals()[0], x[0], v);
    if (ez) {
      ez->assign(1, 0.0);
      (*ez)[0] = y.mean;
    }
    return -c_[0] * y.mean;
  }

  double served = 0.0;
  std::vector<ClippedVar> users;
  int cheapest = -1;
  if (ez) ez->assign(m_, 0.0);
  for (int i = 0; i < m_; ++i) {
    double v = kInfD;
    for (int j : specific_rows_[i]) v = std::min(v, caps[j]);
    ClippedVar a(pmf.marginals()[i], x[i], v);
    served += c_[i] * a.mean;
    if (ez) (*ez)[i] = a.mean;
    if (common_row_ >= 0 && rows_[common_row_][i] > 0) {
      users.push_back(std::move(a));
      if (cheapest < 0 || c_[i] < c_[cheapest]) cheapest = i;
    }
  }
  if (cheapest >= 0) {
    const double u0 = caps[common_row_];
    double shortfall = 0.0;
    if (users.size() == 1) {
      shortfall = users[0].excess(u0);
    } else {
      // E[(A + B - u0)^+] by conditioning on the atoms of A.
      const auto& a = users[0];
      const auto& b = users[1];
      const VecD& pa = pmf.marginals()[star_users_[0]];
      for (std::size_t d = 0; d < a.val.size(); ++d)
        if (pa[d] > 0.0) shortfall += pa[d] * b.excess(u0 - a.val[d]);
    }
    served -= c_[cheapest] * shortfall;
    if (ez) (*ez)[cheapest] -= shortfall;
  }
  return -served;
}

double ServeEvaluator::expected(const WindowPmf& pmf, const VecI& x, const VecD& caps,
                                VecD* ez) const {
  if (separable(pmf)) return expected_separable(pmf, x, caps, ez);
  return expected_atoms(pmf.atoms(), x, caps, ez);
}

// ---------------------------------------------------------------------------
// SpSolver

namespace {
std::vector<VecI> all_rows(const AtoSystem& sys) {
  std::vector<VecI> rows;
  for (int j = 0; j < sys.num_components(); ++j) rows.push_back(sys.bom_row(j));
  return rows;
}
}  // namespace

SpSolver::SpSolver(const AtoSystem& system, const ScenarioTree& tree, SpOptions options)
    : sys_(system),
      tree_(tree),
      opt_(options),
      costs_(make_perturbed_costs(system, options.epsilon)),
      serve_(all_rows(system), costs_.c) {
  // Primes keep running across the stage probability perturbations so no two
  // coefficients share an offset.
  std::size_t prime =
      static_cast<std::size_t>(system.num_components() + system.num_products());
  for (int k = 1; k <= tree_.stages; ++k) {
    VecD probs;
    for (const auto& [d, p] : tree_.stage(k).atoms()) probs.push_back(p);
    auto pp = lp::perturb_costs({}, probs, opt_.epsilon, prime);
    prime = pp.next_prime_index;
    pert_stage_probs_.push_back(std::move(pp.probabilities));
  }
}

std::size_t SpSolver::KeyHash::operator()(const VecI& key) const {
  std::uint64_t h = 1469598103934665603ull;
  for (auto v : key) {
    std::uint64_t x = static_cast<std::uint64_t>(v);
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 1099511628211ull;
  }
  return static_cast<std::size_t>(h);
}

void SpSolver::memo_put(const VecI& key, const StagePoint& v) {
  auto it = memo_.find(key);
  if (it != memo_.end()) {
    it->second.first = v;
    return;
  }
  if (memo_.size() >= opt_.memo_capacity) {
    const VecI& victim = lru_.back();
    memo_.erase(victim);
    lru_.pop_back();
  }
  lru_.push_front(key);
  memo_.emplace(key, std::make_pair(v, lru_.begin()));
}

const SpSolver::StagePoint* SpSolver::memo_get(const VecI& key) {
  auto it = memo_.find(key);
  if (it == memo_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second.second);
  ++stats_.memo_hits;
  return &it->second.first;
}

VecD SpSolver::caps_from_flat(const VecI& up_all) const {
  // up_all = [y^K | y^{K-1} | ... | y^1]
  VecD caps(sys_.num_components(), 0.0);
  int pos = 0;
  for (int l = sys_.num_classes(); l >= 1; --l) {
    for (int t = 0; t < sys_.class_size(l); ++t)
      caps[sys_.class_begin(l) + t] = static_cast<double>(up_all[pos + t]);
    pos += sys_.class_size(l);
  }
  return caps;
}

double SpSolver::leaf_expectation(const VecI& up_all, const VecI& x, VecD* ez) const {
  const VecD caps = caps_from_flat(up_all);
  return serve_.expected(tree_.stage(1), x, caps, ez);
}

IntegerBox SpSolver::box_for(int k, const VecI& up_flat, const VecI& x) const {
  const double a_max = sys_.max_bom_entry();
  const double a_min = sys_.min_nonzero_bom_entry();
  double c_max = 0.0, h_min = kInfD, h_max = 0.0, b_min = kInfD;
  for (double v : costs_.c) c_max = std::max(c_max, v);
  for (int j = 0; j < sys_.num_components(); ++j) {
    h_min = std::min(h_min, sys_.holding_cost(j));
    h_max = std::max(h_max, sys_.holding_cost(j));
  }
  for (double v : costs_.b) b_min = std::min(b_min, v);
  const double kappa_bar = c_max / a_min;
  const double beta_hi = a_max * kappa_bar / h_min;
  const int n = sys_.num_components();
  const double beta_lo =
      (a_max / b_min) * (kappa_bar * (n * a_max + 1.0) + n * h_max * a_max + b_min);

  const double x_l1 = l1_norm(x);
  const double d_l1 = tree_.mean_cumulative_l1(k);
  double up_l1 = 0.0;
  for (auto v : up_flat) up_l1 += static_cast<double>(v < 0 ? -v : v);

  const double hi = beta_hi * (x_l1 + d_l1 + 1.0) + 1.0;
  const double lo = -beta_lo * (x_l1 + d_l1 + up_l1 + 1.0) - 1.0;
  IntegerBox box;
  box.lo.assign(sys_.class_size(k), static_cast<std::int64_t>(std::floor(lo)));
  box.hi.assign(sys_.class_size(k), static_cast<std::int64_t>(std::ceil(hi)));
  return box;
}

IntegerBox SpSolver::solution_box(int k, const std::vector<VecD>& y_upstream,
                                  const VecI& x) const {
  VecI up_flat;
  for (int l = sys_.num_classes(); l > k; --l) {
    const VecD& y = y_upstream[l - k - 1];
    for (double v : y) up_flat.push_back(round_half_even(v));
  }
  return box_for(k, up_flat, x);
}

std::int64_t SpSolver::minimize_coordinate(const std::function<double(std::int64_t)>& f,
                                           std::int64_t lo, std::int64_t hi,
                                           std::int64_t start) const {
  std::unordered_map<std::int64_t, double> cache;
  auto F = [&](std::int64_t v) {
    auto it = cache.find(v);
    if (it != cache.end()) return it->second;
    const double r = f(v);
    cache.emplace(v, r);
    return r;
  };
  (void)start;
  std::int64_t llo = lo, lhi = hi;
  while (lhi - llo > 2) {
    const std::int64_t m1 = llo + (lhi - llo) / 3;
    const std::int64_t m2 = lhi - (lhi - llo) / 3;
    const double f1 = F(m1), f2 = F(m2);
    if (f1 < f2) {
      lhi = m2;
    } else if (f1 > f2) {
      llo = m1;
    } else {
      llo = m1;
      lhi = m2;
    }
  }
  std::int64_t best = llo;
  double fbest = F(llo);
  for (std::int64_t v = llo + 1; v <= lhi; ++v) {
    const double fv = F(v);
    if (fv < fbest) {
      fbest = fv;
      best = v;
    }
  }
  // Absorb float-level ripples around the cut point.
  for (std::int64_t v = std::max(lo, best - 2); v <= std::min(hi, best + 2); ++v) {
    const double fv = F(v);
    if (fv < fbest) {
      fbest = fv;
      best = v;
    }
  }
  return best;
}

namespace {

// Integer coordinate descent over a convex objective inside a widening box.
// Shared by every stage minimization so all routes break ties identically.
struct VectorMinimizer {
  int dim;
  IntegerBox box;
  std::function<double(const VecI&)> eval;
  std::function<std::int64_t(const std::function<double(std::int64_t)>&, std::int64_t,
                             std::int64_t, std::int64_t)>
      minimize_coord;
  int max_widenings = 12;
  long* widen_counter = nullptr;

  VecI run(VecI y) {
    for (int t = 0; t < dim; ++t) y[t] = std::clamp(y[t], box.lo[t], box.hi[t]);
    int widenings = 0;
    for (;;) {
      descend(y);
      bool on_edge = false;
      for (int t = 0; t < dim; ++t) {
        if (y[t] == box.lo[t]) {
          box.lo[t] -= std::max<std::int64_t>(8, box.hi[t] - box.lo[t]);
          on_edge = true;
        } else if (y[t] == box.hi[t]) {
          box.hi[t] += std::max<std::int64_t>(8, box.hi[t] - box.lo[t]);
          on_edge = true;
        }
      }
      if (!on_edge) return y;
      if (widen_counter) ++*widen_counter;
      if (++widenings > max_widenings)
        throw SolverError("stage search box kept widening; check cost signs");
    }
  }

 private:
  void descend(VecI& y) {
    if (dim == 1) {
      y[0] = minimize_coord([&](std::int64_t v) { return eval(VecI{v}); }, box.lo[0],
                            box.hi[0], y[0]);
      return;
    }
    bool moved = true;
    while (moved) {
      moved = false;
      for (int t = 0; t < dim; ++t) {
        VecI cand = y;
        const std::int64_t prev = y[t];
        const std::int64_t opt = minimize_coord(
            [&](std::int64_t v) {
              cand[t] = v;
              return eval(cand);
            },
            box.lo[t], box.hi[t], prev);
        if (opt != prev) {
          y[t] = opt;
          moved = true;
        }
      }
      if (!moved && dim <= 3) {
        // Diagonal probe to step off kinks of the piecewise-linear surface.
        const double base = eval(y);
        double best = base;
        VecI best_y = y;
        VecI probe(dim, 0);
        const std::int64_t span = dim <= 2 ? 2 : 1;
        std::function<void(int)> rec = [&](int t) {
          if (t == dim) {
            if (probe != y) {
              const double v = eval(probe);
              if (v < best) {
                best = v;
                best_y = probe;
              }
            }
            return;
          }
          for (std::int64_t delta = -span; delta <= span; ++delta) {
            probe[t] = std::clamp(y[t] + delta, box.lo[t], box.hi[t]);
            rec(t + 1);
          }
        };
        rec(0);
        if (best < base) {
          y = best_y;
          moved = true;
        }
      }
    }
  }
};

}  // namespace

double SpSolver::stage_objective(int k, VecI& up_flat, const VecI& x, const VecI& y) {
  double obj = 0.0;
  const VecD& h = costs_.h[k - 1];
  for (std::size_t t = 0; t < y.size(); ++t) obj += h[t] * static_cast<double>(y[t]);
  const std::size_t base = up_flat.size();
  up_flat.insert(up_flat.end(), y.begin(), y.end());
  if (k == 1) {
    obj += leaf_expectation(up_flat, x, nullptr);
  } else {
    VecI xe(x.size());
    for (const auto& [d, p] : tree_.stage(k).atoms()) {
      for (std::size_t i = 0; i < x.size(); ++i) xe[i] = x[i] + d[i];
      obj += p * minimize_stage(k - 1, up_flat, xe).value;
    }
  }
  up_flat.resize(base);
  return obj;
}

SpSolver::StagePoint SpSolver::minimize_stage(int k, VecI& up_flat, const VecI& x) {
  VecI key;
  key.reserve(2 + up_flat.size() + x.size());
  key.push_back(k);
  key.insert(key.end(), up_flat.begin(), up_flat.end());
  key.insert(key.end(), x.begin(), x.end());
  if (const StagePoint* hit = memo_get(key)) return *hit;
  ++stats_.stage_solves;

  const int dim = sys_.class_size(k);

  // Mean-coverage warm start.
  VecD mu(x.size(), 0.0);
  for (int l = 1; l <= k; ++l) {
    const VecD sm = tree_.stage(l).mean();
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += sm[i];
  }
  VecI start(dim, 0);
  for (int t = 0; t < dim; ++t) {
    const int j = sys_.class_begin(k) + t;
    double guess = 0.0;
    for (int i = 0; i < sys_.num_products(); ++i)
      guess += static_cast<double>(sys_.bom(j, i)) * (static_cast<double>(x[i]) + mu[i]);
    start[t] = round_half_even(guess);
  }

  std::unordered_map<VecI, double, KeyHash> local;
  VectorMinimizer vm;
  vm.dim = dim;
  vm.box = box_for(k, up_flat, x);
  vm.eval = [&](const VecI& cand) {
    auto it = local.find(cand);
    if (it != local.end()) return it->second;
    const double v = stage_objective(k, up_flat, x, cand);
    local.emplace(cand, v);
    return v;
  };
  vm.minimize_coord = [this](const std::function<double(std::int64_t)>& f, std::int64_t lo,
                             std::int64_t hi, std::int64_t s) {
    return minimize_coordinate(f, lo, hi, s);
  };
  vm.max_widenings = opt_.max_box_widenings;
  vm.widen_counter = &stats_.box_widenings;

  const VecI y = vm.run(start);
  StagePoint pt{y, vm.eval(y)};
  memo_put(key, pt);
  return pt;
}

SpSolution SpSolver::solve_stage(int k, const std::vector<VecD>& y_upstream, const VecI& x,
                                 Backend backend) {
  if (k < 1 || k > sys_.num_classes()) throw ValidationError("stage out of range");
  if (static_cast<int>(y_upstream.size()) != sys_.num_classes() - k)
    throw ValidationError("upstream decision count must be K - k");
  if (static_cast<int>(x.size()) != sys_.num_products())
    throw ValidationError("x dimension mismatch");

  SpSolution sol;
  sol.k = k;
  sol.backend = backend;
  if (backend == Backend::kTreeLp) {
    lp::LpProblem p = build_stage_lp(k, y_upstream, x, true);
    lp::SolveOptions lo;
    lo.iteration_limit = opt_.lp_iteration_limit;
    const auto s = lp::solve(p, lo);
    if (s.status != lp::LpStatus::kOptimal)
      throw SolverError("stage lp did not reach an optimum");
    sol.y.assign(s.x.begin(), s.x.begin() + sys_.class_size(k));
    sol.y_rounded = round_half_even(sol.y);
    sol.objective = s.objective;
    return sol;
  }

  VecI up_flat;
  for (int l = sys_.num_classes(); l > k; --l) {
    const VecD& yl = y_upstream[l - k - 1];
    if (static_cast<int>(yl.size()) != sys_.class_size(l))
      throw ValidationError("upstream decision dimension mismatch");
    for (double v : yl) up_flat.push_back(round_half_even(v));
  }
  const StagePoint pt = minimize_stage(k, up_flat, x);
  sol.y = to_double(pt.y);
  sol.y_rounded = pt.y;
  sol.objective = pt.value;
  return sol;
}

lp::LpProblem SpSolver::build_stage_lp(int k, const std::vector<VecD>& y_upstream,
                                       const VecI& x, bool perturbed) const {
  const int m = sys_.num_products();
  const int K = sys_.num_classes();
  if (k < 1 || k > K) throw ValidationError("stage out of range");
  if (static_cast<int>(y_upstream.size()) != K - k)
    throw ValidationError("upstream decision count must be K - k");
  for (auto v : x)
    if (v < 0) throw ValidationError("x must be non-negative");

  std::vector<std::size_t> s(k + 1, 1);
  for (int l = 1; l <= k; ++l) s[l] = tree_.stage(l).atoms().size();
  // nodes[l] = number of level-l nodes = prod_{l' = l+1..k} s[l'].
  std::vector<std::size_t> nodes(k + 1, 1);
  for (int l = k - 1; l >= 0; --l) nodes[l] = nodes[l + 1] * s[l + 1];
  const double rows_needed =
      static_cast<double>(nodes[0]) * (m + sys_.num_components());
  if (rows_needed > 6000.0)
    throw SolverError("stage lp too large for the dense simplex; use the nested backend");

  const auto stage_prob = [&](int l, std::size_t idx) {
    return perturbed ? pert_stage_probs_[l - 1][idx] : tree_.stage(l).atoms()[idx].second;
  };

  lp::LpProblem p;
  std::vector<int> yoff(k + 1, 0);
  for (int l = k; l >= 1; --l) {
    yoff[l] = p.num_vars;
    const int cs = sys_.class_size(l);
    for (std::size_t nd = 0; nd < nodes[l]; ++nd)
      for (int t = 0; t < cs; ++t) p.add_variable(0.0);
  }
  const int zoff = p.num_vars;
  for (std::size_t leaf = 0; leaf < nodes[0]; ++leaf)
    for (int i = 0; i < m; ++i) p.add_variable(0.0);

  // Objective on the y variables: path probability times holding cost.
  for (int l = k; l >= 1; --l) {
    VecD h = perturbed ? costs_.h[l - 1]
                       : VecD(sys_.holding_costs().begin() + sys_.class_begin(l),
                              sys_.holding_costs().begin() + sys_.class_end(l));
    const int cs = sys_.class_size(l);
    for (std::size_t nd = 0; nd < nodes[l]; ++nd) {
      double prob = 1.0;
      std::size_t weight = nodes[l];
      std::size_t idx = nd;
      for (int l2 = k; l2 >= l + 1; --l2) {
        weight /= s[l2];
        prob *= stage_prob(l2, idx / weight);
        idx %= weight;
      }
      for (int t = 0; t < cs; ++t)
        p.objective[yoff[l] + static_cast<int>(nd) * cs + t] = prob * h[t];
    }
  }

  const VecD c = perturbed ? costs_.c : effective_unit_cost(sys_).c;

  VecI cum(m, 0);
  std::vector<std::size_t> node_at(k + 1, 0);
  for (std::size_t leaf = 0; leaf < nodes[0]; ++leaf) {
    double prob = 1.0;
    for (int i = 0; i < m; ++i) cum[i] = x[i];
    std::size_t weight = nodes[0];
    std::size_t idx = leaf;
    std::size_t acc = 0;
    node_at[k] = 0;
    for (int l = k; l >= 1; --l) {
      weight /= s[l];
      const std::size_t digit = idx / weight;
      idx %= weight;
      prob *= stage_prob(l, digit);
      iadd(cum, tree_.stage(l).atoms()[digit].first);
      acc = acc * s[l] + digit;
      if (l - 1 >= 1) node_at[l - 1] = acc;
    }
    const int zbase = zoff + static_cast<int>(leaf) * m;
    for (int i = 0; i < m; ++i) p.objective[zbase + i] = -prob * c[i];

    for (int i = 0; i < m; ++i) {
      const int r = p.add_row(lp::RowSense::kLe, static_cast<double>(cum[i]));
      p.set(r, zbase + i, 1.0);
    }
    for (int l = 1; l <= k; ++l) {
      const int cs = sys_.class_size(l);
      for (int t = 0; t < cs; ++t) {
        const int j = sys_.class_begin(l) + t;
        const int r = p.add_row(lp::RowSense::kLe, 0.0);
        for (int i = 0; i < m; ++i)
          if (sys_.bom(j, i) != 0)
            p.set(r, zbase + i, static_cast<double>(sys_.bom(j, i)));
        p.set(r, yoff[l] + static_cast<int>(node_at[l]) * cs + t, -1.0);
      }
    }
    for (int l = k + 1; l <= K; ++l) {
      const VecD& yl = y_upstream[l - k - 1];
      for (int t = 0; t < sys_.class_size(l); ++t) {
        const int j = sys_.class_begin(l) + t;
        const int r = p.add_row(lp::RowSense::kLe, yl[t]);
        for (int i = 0; i < m; ++i)
          if (sys_.bom(j, i) != 0)
            p.set(r, zbase + i, static_cast<double>(sys_.bom(j, i)));
      }
    }
  }
  return p;
}

void SpSolver::decomposition_walk(int k, VecI& up_flat, const VecI& x, double prob,
                                  VecD& hold, VecD& ez_total) {
  const StagePoint pt = minimize_stage(k, up_flat, x);
  const VecD& h = costs_.h[k - 1];
  for (std::size_t t = 0; t < pt.y.size(); ++t)
    hold[0] += prob * h[t] * static_cast<double>(pt.y[t]);
  const std::size_t base = up_flat.size();
  up_flat.insert(up_flat.end(), pt.y.begin(), pt.y.end());
  if (k == 1) {
    VecD ez;
    leaf_expectation(up_flat, x, &ez);
    for (int i = 0; i < sys_.num_products(); ++i) ez_total[i] += prob * ez[i];
  } else {
    VecI xe(x.size());
    for (const auto& [d, pd] : tree_.stage(k).atoms()) {
      for (std::size_t i = 0; i < x.size(); ++i) xe[i] = x[i] + d[i];
      decomposition_walk(k - 1, up_flat, xe, prob * pd, hold, ez_total);
    }
  }
  up_flat.resize(base);
}

LowerBound SpSolver::lower_bound(Backend backend) {
  if (model_ == nullptr)
    throw SolverError("lower_bound needs the demand model for the exact window mean");
  const int K = sys_.num_classes();
  const double L_K = sys_.class_lead_time(K);
  const VecD mu = model_->mean_rate();

  LowerBound out;
  out.sampled = tree_.sampled;
  double phi = 0.0;
  VecD hold(1, 0.0);
  VecD ez(sys_.num_products(), 0.0);  // E[z*] under the truncated stages

  if (backend == Backend::kNested) {
    VecI up;
    VecI x0(sys_.num_products(), 0);
    const StagePoint top = minimize_stage(K, up, x0);
    phi = top.value;
    decomposition_walk(K, up, x0, 1.0, hold, ez);
  } else {
    lp::LpProblem p = build_stage_lp(K, {}, VecI(sys_.num_products(), 0), true);
    lp::SolveOptions lo;
    lo.iteration_limit = opt_.lp_iteration_limit;
    const auto s = lp::solve(p, lo);
    if (s.status != lp::LpStatus::kOptimal)
      throw SolverError("scenario lp did not reach an optimum");
    phi = s.objective;

    std::vector<std::size_t> sz(K + 1, 1);
    for (int l = 1; l <= K; ++l) sz[l] = tree_.stage(l).atoms().size();
    std::vector<std::size_t> nodes(K + 1, 1);
    for (int l = K - 1; l >= 0; --l) nodes[l] = nodes[l + 1] * sz[l + 1];
    std::vector<int> yoff(K + 1, 0);
    int pos = 0;
    for (int l = K; l >= 1; --l) {
      yoff[l] = pos;
      pos += static_cast<int>(nodes[l]) * sys_.class_size(l);
    }
    const int zoff = pos;
    for (int l = K; l >= 1; --l) {
      const int cs = sys_.class_size(l);
      for (std::size_t nd = 0; nd < nodes[l]; ++nd) {
        double prob = 1.0;
        std::size_t weight = nodes[l];
        std::size_t idx = nd;
        for (int l2 = K; l2 >= l + 1; --l2) {
          weight /= sz[l2];
          prob *= pert_stage_probs_[l2 - 1][idx / weight];
          idx %= weight;
        }
        for (int t = 0; t < cs; ++t)
          hold[0] += prob * costs_.h[l - 1][t] *
                     s.x[yoff[l] + static_cast<int>(nd) * cs + t];
      }
    }
    for (std::size_t leaf = 0; leaf < nodes[0]; ++leaf) {
      double prob = 1.0;
      std::size_t weight = nodes[0];
      std::size_t idx = leaf;
      for (int l = K; l >= 1; --l) {
        weight /= sz[l];
        const std::size_t digit = idx / weight;
        idx %= weight;
        prob *= pert_stage_probs_[l - 1][digit];
      }
      for (int i = 0; i < sys_.num_products(); ++i)
        ez[i] += prob * s.x[zoff + static_cast<int>(leaf) * sys_.num_products() + i];
    }
  }

  // B* = Dbar - z* with the exact window mean for Dbar.
  VecD eb(sys_.num_products(), 0.0);
  for (int i = 0; i < sys_.num_products(); ++i) eb[i] = mu[i] * L_K - ez[i];
  out.holding_term = hold[0];
  out.serve_term = dot(costs_.c, eb);
  double corr = 0.0;
  for (int i = 0; i < sys_.num_products(); ++i) {
    double ah = 0.0;
    for (int j = 0; j < sys_.num_components(); ++j)
      ah += sys_.holding_cost(j) * static_cast<double>(sys_.bom(j, i));
    corr -= ah * mu[i] * L_K;
  }
  out.correction_term = corr;
  out.value = phi + dot(costs_.b, mu) * L_K;
  out.decomposition = out.holding_term + out.serve_term + out.correction_term;
  const double tol = 1e-6 * std::max(1.0, std::fabs(out.value));
  if (std::fabs(out.value - out.decomposition) > tol) {
    std::ostringstream os;
    os << "lower bound decomposition mismatch: " << out.value << " vs "
       << out.decomposition;
    throw SolverError(os.str());
  }
  return out;
}

double SpSolver::two_stage_identical_bound() {
  if (model_ == nullptr)
    throw SolverError("identical-lead-time bound needs the demand model");
  const int K = sys_.num_classes();
  const double L_K = sys_.class_lead_time(K);

  std::vector<VecI> rows;
  VecD c_i = costs_.b;
  for (int j = sys_.class_begin(K); j < sys_.class_end(K); ++j) {
    rows.push_back(sys_.bom_row(j));
    for (int i = 0; i < sys_.num_products(); ++i)
      c_i[i] += costs_.h[K - 1][j - sys_.class_begin(K)] *
                static_cast<double>(sys_.bom(j, i));
  }
  ServeEvaluator serve(rows, c_i);

  const VecD mu = model_->mean_rate();
  WindowPmf pmf;
  if (K == 1) {
    pmf = tree_.stage(1);  // the relaxation is the problem itself
  } else if (tree_.m_override > 0) {
    pmf = window_distribution(*model_, L_K, tree_.m_override);
  } else {
    pmf = window_distribution_clamped(*model_, L_K, default_clamp(*model_, L_K));
  }

  const int dim = sys_.class_size(K);
  const VecD& h = costs_.h[K - 1];
  const VecI x0(sys_.num_products(), 0);

  std::unordered_map<VecI, double, KeyHash> local;
  VectorMinimizer vm;
  vm.dim = dim;
  {
    VecI up;
    vm.box = box_for(K, up, x0);
  }
  vm.eval = [&](const VecI& y) {
    auto it = local.find(y);
    if (it != local.end()) return it->second;
    VecD caps(dim);
    double v = 0.0;
    for (int t = 0; t < dim; ++t) {
      caps[t] = static_cast<double>(y[t]);
      v += h[t] * static_cast<double>(y[t]);
    }
    v += serve.expected(pmf, x0, caps, nullptr);
    local.emplace(y, v);
    return v;
  };
  vm.minimize_coord = [this](const std::function<double(std::int64_t)>& f, std::int64_t lo,
                             std::int64_t hi, std::int64_t s) {
    return minimize_coordinate(f, lo, hi, s);
  };
  vm.max_widenings = opt_.max_box_widenings;
  vm.widen_counter = &stats_.box_widenings;

  const VecD mean = pmf.mean();
  VecI start(dim, 0);
  for (int t = 0; t < dim; ++t) {
    const int j = sys_.class_begin(K) + t;
    double guess = 0.0;
    for (int i = 0; i < sys_.num_products(); ++i)
      guess += static_cast<double>(sys_.bom(j, i)) * mean[i];
    start[t] = round_half_even(guess);
  }
  const VecI y = vm.run(start);
  return vm.eval(y) + dot(costs_.b, mu) * L_K;
}

SpSolution solve_stage(const AtoSystem& system, const ScenarioTree& tree, int k,
                       const std::vector<VecD>& y_upstream, const VecI& x, Backend backend) {
  SpSolver solver(system, tree);
  return solver.solve_stage(k, y_upstream, x, backend);
}

LowerBound lower_bound(const AtoSystem& system, const DemandModel& model, std::int64_t M,
                       Backend backend) {
  TreeOptions topt;
  topt.m_override = M;
  if (backend == Backend::kNested) topt.leaf_budget = kInfD;
  const ScenarioTree tree = build_scenario_tree(system, model, topt);
  SpSolver solver(system, tree);
  solver.set_demand_model(&model);
  return solver.lower_bound(backend);
}

double two_stage_identical_bound(const AtoSystem& system, const DemandModel& model,
                                 std::int64_t M) {
  TreeOptions topt;
  topt.m_override = M;
  topt.leaf_budget = kInfD;
  const ScenarioTree tree = build_scenario_tree(system, model, topt);
  SpSolver solver(system, tree);
  solver.set_demand_model(&model);
  return solver.two_stage_identical_bound();
}

}  // namespace ato
