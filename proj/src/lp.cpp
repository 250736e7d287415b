#include "ato/lp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace ato {
namespace lp {

int LpProblem::add_variable(double cost, Bound bound) {
  objective.push_back(cost);
  bounds.push_back(bound);
  return num_vars++;
}

int LpProblem::add_row(RowSense sense, double rhs_value) {
  senses.push_back(sense);
  rhs.push_back(rhs_value);
  return static_cast<int>(rhs.size()) - 1;
}

void LpProblem::set(int row, int col, double value) {
  if (value != 0.0) entries.push_back({row, col, value});
}

namespace {

enum class VarState { kBasic, kAtLower, kAtUpper, kFree };

struct Column {
  std::vector<int> row;
  VecD val;
};

class Simplex {
 public:
  Simplex(const LpProblem& p, const SolveOptions& opt) : p_(p), opt_(opt) {
    rows_ = p.num_rows();
    n_struct_ = p.num_vars;
    build_columns();
  }

  LpSolution run() {
    init_basis();
    LpSolution sol;
    if (!infeasible_rows_.empty()) {
      phase_ = 1;
      const bool ok = iterate();
      if (!ok) throw SolverError("lp iteration limit exceeded in phase 1");
      if (phase1_objective() > opt_.feasibility_tol) {
        sol.status = LpStatus::kInfeasible;
        sol.iterations = iters_;
        return sol;
      }
      fix_artificials();
    }
    phase_ = 2;
    const bool ok = iterate();
    if (!ok) throw SolverError("lp iteration limit exceeded");
    if (unbounded_) {
      sol.status = LpStatus::kUnbounded;
      sol.iterations = iters_;
      return sol;
    }
    refactorize();
    sol.status = LpStatus::kOptimal;
    sol.iterations = iters_;
    sol.x.assign(n_struct_, 0.0);
    for (int j = 0; j < n_struct_; ++j) sol.x[j] = value_of(j);
    sol.objective = dot(p_.objective, sol.x);
    post_check(sol);
    return sol;
  }

 private:
  // Variables: [0, n_struct_) structural, [n_struct_, n_struct_+rows_) slacks,
  // then one artificial per initially infeasible row.
  const LpProblem& p_;
  SolveOptions opt_;
  int rows_ = 0;
  int n_struct_ = 0;
  int n_total_ = 0;
  std::vector<Column> cols_;
  VecD lo_, hi_;
  std::vector<VarState> state_;
  std::vector<int> basis_;       // row -> variable
  std::vector<int> basic_row_;   // variable -> row or -1
  VecD xb_;                      // basic values by row
  VecD binv_;                    // rows_ x rows_, row-major dense inverse
  std::vector<int> infeasible_rows_;
  std::vector<int> artificial_of_row_;
  int phase_ = 2;
  long iters_ = 0;
  bool unbounded_ = false;
  long degenerate_streak_ = 0;
  bool bland_ = false;

  double& binv(int i, int j) { return binv_[static_cast<std::size_t>(i) * rows_ + j]; }

  void build_columns() {
    n_total_ = n_struct_ + rows_;
    cols_.resize(n_total_);
    lo_.assign(n_total_, 0.0);
    hi_.assign(n_total_, 0.0);
    for (int j = 0; j < n_struct_; ++j) {
      lo_[j] = p_.bounds[j].lo;
      hi_[j] = p_.bounds[j].hi;
      if (lo_[j] > hi_[j]) throw ValidationError("variable bound lo > hi");
    }
    std::vector<std::vector<std::pair<int, double>>> by_col(n_struct_);
    for (const auto& e : p_.entries) {
      if (e.row < 0 || e.row >= rows_ || e.col < 0 || e.col >= n_struct_)
        throw ValidationError("lp entry out of range");
      if (!std::isfinite(e.value)) throw ValidationError("non-finite lp coefficient");
      by_col[e.col].emplace_back(e.row, e.value);
    }
    for (int j = 0; j < n_struct_; ++j) {
      std::sort(by_col[j].begin(), by_col[j].end());
      for (std::size_t t = 0; t < by_col[j].size(); ++t) {
        // merge duplicate entries
        if (t + 1 < by_col[j].size() && by_col[j][t + 1].first == by_col[j][t].first) {
          by_col[j][t + 1].second += by_col[j][t].second;
          continue;
        }
        cols_[j].row.push_back(by_col[j][t].first);
        cols_[j].val.push_back(by_col[j][t].second);
      }
    }
    for (int i = 0; i < rows_; ++i) {
      const int j = n_struct_ + i;
      cols_[j].row.push_back(i);
      cols_[j].val.push_back(1.0);
      switch (p_.senses[i]) {
        case RowSense::kLe:
          lo_[j] = 0.0;
          hi_[j] = kInf;
          break;
        case RowSense::kGe:
          lo_[j] = -kInf;
          hi_[j] = 0.0;
          break;
        case RowSense::kEq:
          lo_[j] = 0.0;
          hi_[j] = 0.0;
          break;
      }
    }
  }

  double nonbasic_value(int j) const {
    switch (state_[j]) {
      case VarState::kAtLower:
        return lo_[j];
      case VarState::kAtUpper:
        return hi_[j];
      default:
        return 0.0;
    }
  }

  double value_of(int j) const {
    return basic_row_[j] >= 0 ? xb_[basic_row_[j]] : nonbasic_value(j);
  }

  void init_basis() {
    state_.assign(n_total_, VarState::kAtLower);
    for (int j = 0; j < n_total_; ++j) {
      if (lo_[j] == -kInf && hi_[j] == kInf)
        state_[j] = VarState::kFree;
      else if (lo_[j] == -kInf)
        state_[j] = VarState::kAtUpper;
      else
        state_[j] = VarState::kAtLower;
    }
    basis_.resize(rows_);
    basic_row_.assign(n_total_, -1);

    // Slack values implied by nonbasic structurals at their bounds.
    VecD s(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) s[i] = p_.rhs[i];
    for (int j = 0; j < n_struct_; ++j) {
      const double v = nonbasic_value(j);
      if (v != 0.0)
        for (std::size_t t = 0; t < cols_[j].row.size(); ++t)
          s[cols_[j].row[t]] -= cols_[j].val[t] * v;
    }

    artificial_of_row_.assign(rows_, -1);
    infeasible_rows_.clear();
    for (int i = 0; i < rows_; ++i) {
      const int sj = n_struct_ + i;
      if (s[i] >= lo_[sj] - opt_.feasibility_tol && s[i] <= hi_[sj] + opt_.feasibility_tol) {
        basis_[i] = sj;
        basic_row_[sj] = i;
        state_[sj] = VarState::kBasic;
        continue;
      }
      // Pin the slack at its nearest bound and cover the gap with an
      // artificial so the starting basis is feasible.
      infeasible_rows_.push_back(i);
      double pin, gap_sign;
      if (s[i] > hi_[sj]) {
        pin = hi_[sj];
        gap_sign = 1.0;
      } else {
        pin = lo_[sj];
        gap_sign = -1.0;
      }
      state_[sj] = (pin == hi_[sj]) ? VarState::kAtUpper : VarState::kAtLower;
      const int aj = static_cast<int>(cols_.size());
      Column ac;
      ac.row.push_back(i);
      ac.val.push_back(gap_sign);
      cols_.push_back(ac);
      lo_.push_back(0.0);
      hi_.push_back(kInf);
      state_.push_back(VarState::kBasic);
      basic_row_.push_back(i);
      basis_[i] = aj;
      artificial_of_row_[i] = aj;
      ++n_total_;
    }
    refactorize();
  }

  void refactorize() {
    // Dense Gauss-Jordan inverse of the basis matrix.
    VecD mat(static_cast<std::size_t>(rows_) * rows_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      const Column& c = cols_[basis_[i]];
      for (std::size_t t = 0; t < c.row.size(); ++t)
        mat[static_cast<std::size_t>(c.row[t]) * rows_ + i] = c.val[t];
    }
    binv_.assign(static_cast<std::size_t>(rows_) * rows_, 0.0);
    for (int i = 0; i < rows_; ++i) binv(i, i) = 1.0;
    for (int col = 0; col < rows_; ++col) {
      int piv = -1;
      double best = 0.0;
      for (int i = col; i < rows_; ++i) {
        const double a = std::fabs(mat[static_cast<std::size_t>(i) * rows_ + col]);
        if (a > best) {
          best = a;
          piv = i;
        }
      }
      if (piv < 0 || best < 1e-12) throw SolverError("singular basis during refactorization");
      if (piv != col) {
        for (int j = 0; j < rows_; ++j) {
          std::swap(mat[static_cast<std::size_t>(piv) * rows_ + j],
                    mat[static_cast<std::size_t>(col) * rows_ + j]);
          std::swap(binv(piv, j), binv(col, j));
        }
      }
      const double d = mat[static_cast<std::size_t>(col) * rows_ + col];
      for (int j = 0; j < rows_; ++j) {
        mat[static_cast<std::size_t>(col) * rows_ + j] /= d;
        binv(col, j) /= d;
      }
      for (int i = 0; i < rows_; ++i) {
        if (i == col) continue;
        const double f = mat[static_cast<std::size_t>(i) * rows_ + col];
        if (f == 0.0) continue;
        for (int j = 0; j < rows_; ++j) {
          mat[static_cast<std::size_t>(i) * rows_ + j] -= f * mat[static_cast<std::size_t>(col) * rows_ + j];
          binv(i, j) -= f * binv(col, j);
        }
      }
    }
    recompute_basics();
  }

  void recompute_basics() {
    VecD rhs_eff(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) rhs_eff[i] = p_.rhs[i];
    for (int j = 0; j < n_total_; ++j) {
      if (basic_row_[j] >= 0) continue;
      const double v = nonbasic_value(j);
      if (v == 0.0) continue;
      for (std::size_t t = 0; t < cols_[j].row.size(); ++t)
        rhs_eff[cols_[j].row[t]] -= cols_[j].val[t] * v;
    }
    xb_.assign(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (int j = 0; j < rows_; ++j) s += binv(i, j) * rhs_eff[j];
      xb_[i] = s;
    }
  }

  double cost_of(int j) const {
    if (phase_ == 1) return j >= n_struct_ + rows_ ? 1.0 : 0.0;
    return j < n_struct_ ? p_.objective[j] : 0.0;
  }

  double phase1_objective() const {
    double s = 0.0;
    for (int i = 0; i < rows_; ++i)
      if (basis_[i] >= n_struct_ + rows_) s += xb_[i];
    return s;
  }

  void fix_artificials() {
    // Artificials are pinned at zero for phase 2. Basic-at-zero artificials
    // may stay; the ratio test keeps them at zero.
    for (int j = n_struct_ + rows_; j < n_total_; ++j) {
      hi_[j] = 0.0;
      if (basic_row_[j] < 0) state_[j] = VarState::kAtLower;
    }
  }

  // y = c_B * Binv
  void btran_costs(VecD& y) const {
    y.assign(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      const double cb = cost_of(basis_[i]);
      if (cb == 0.0) continue;
      const double* row = &binv_[static_cast<std::size_t>(i) * rows_];
      for (int j = 0; j < rows_; ++j) y[j] += cb * row[j];
    }
  }

  double reduced_cost(int j, const VecD& y) const {
    double d = cost_of(j);
    const Column& c = cols_[j];
    for (std::size_t t = 0; t < c.row.size(); ++t) d -= y[c.row[t]] * c.val[t];
    return d;
  }

  bool iterate() {
    VecD y, w;
    while (iters_ < opt_.iteration_limit) {
      btran_costs(y);
      // Entering variable.
      int enter = -1;
      double enter_score = opt_.reduced_cost_tol;
      int enter_dir = 0;
      double enter_rc = 0.0;
      for (int j = 0; j < n_total_; ++j) {
        if (basic_row_[j] >= 0) continue;
        if (lo_[j] == hi_[j]) continue;  // fixed
        if (phase_ == 2 && j >= n_struct_ + rows_) continue;
        const double d = reduced_cost(j, y);
        int dir = 0;
        if (state_[j] == VarState::kAtLower && d < -opt_.reduced_cost_tol)
          dir = +1;
        else if (state_[j] == VarState::kAtUpper && d > opt_.reduced_cost_tol)
          dir = -1;
        else if (state_[j] == VarState::kFree && std::fabs(d) > opt_.reduced_cost_tol)
          dir = d > 0 ? -1 : +1;
        if (dir == 0) continue;
        if (bland_) {
          enter = j;
          enter_dir = dir;
          enter_rc = d;
          break;
        }
        if (std::fabs(d) > enter_score) {
          enter_score = std::fabs(d);
          enter = j;
          enter_dir = dir;
          enter_rc = d;
        }
      }
      if (enter < 0) return true;  // phase optimal

      // w = Binv * A_enter
      w.assign(rows_, 0.0);
      const Column& c = cols_[enter];
      for (std::size_t t = 0; t < c.row.size(); ++t) {
        const int r = c.row[t];
        const double v = c.val[t];
        for (int i = 0; i < rows_; ++i) w[i] += binv(i, r) * v;
      }

      // Ratio test: basic variable in row i changes at rate -dir*w_i per unit
      // step of the entering variable.
      const double flip_limit =
          (lo_[enter] > -kInf && hi_[enter] < kInf) ? hi_[enter] - lo_[enter] : kInf;
      double best_ratio = kInf;
      int leave = -1;
      double leave_to = 0.0;
      for (int i = 0; i < rows_; ++i) {
        if (std::fabs(w[i]) <= opt_.pivot_tol) continue;
        const double rate = -enter_dir * w[i];
        const int bj = basis_[i];
        double ratio;
        double hit;
        if (rate > 0.0 && hi_[bj] < kInf) {
          ratio = (hi_[bj] - xb_[i]) / rate;
          hit = hi_[bj];
        } else if (rate < 0.0 && lo_[bj] > -kInf) {
          ratio = (xb_[i] - lo_[bj]) / (-rate);
          hit = lo_[bj];
        } else {
          continue;
        }
        ratio = std::max(ratio, 0.0);
        if (leave < 0 || ratio < best_ratio - 1e-12) {
          best_ratio = ratio;
          leave = i;
          leave_to = hit;
        } else if (ratio < best_ratio + 1e-12 && better_leave(i, leave, w)) {
          leave = i;
          leave_to = hit;
        }
      }

      double limit;
      if (leave >= 0 && best_ratio <= flip_limit) {
        limit = best_ratio;
      } else if (flip_limit < kInf) {
        limit = flip_limit;
        leave = -1;
      } else {
        ++iters_;
        if (phase_ == 1) throw SolverError("phase-1 unbounded: inconsistent state");
        unbounded_ = true;
        return true;
      }

      ++iters_;
      if (limit <= 1e-11)
        ++degenerate_streak_;
      else
        degenerate_streak_ = 0;
      if (degenerate_streak_ > 200) bland_ = true;
      if (degenerate_streak_ == 0 && bland_) bland_ = false;

      if (leave < 0) {
        // Bound flip of the entering variable.
        for (int i = 0; i < rows_; ++i) xb_[i] -= enter_dir * limit * w[i];
        state_[enter] = (state_[enter] == VarState::kAtLower) ? VarState::kAtUpper
                                                              : VarState::kAtLower;
        continue;
      }

      // Pivot: entering value moves from its bound by dir*limit.
      const double enter_val = nonbasic_value(enter) + enter_dir * limit;
      for (int i = 0; i < rows_; ++i) xb_[i] -= enter_dir * limit * w[i];
      const int leaving_var = basis_[leave];
      basic_row_[leaving_var] = -1;
      state_[leaving_var] = (leave_to == hi_[leaving_var] && hi_[leaving_var] != lo_[leaving_var])
                                ? VarState::kAtUpper
                                : VarState::kAtLower;
      if (lo_[leaving_var] == -kInf && leave_to == hi_[leaving_var])
        state_[leaving_var] = VarState::kAtUpper;
      basis_[leave] = enter;
      basic_row_[enter] = leave;
      state_[enter] = VarState::kBasic;
      xb_[leave] = enter_val;

      // Product-form update of Binv.
      const double piv = w[leave];
      double* prow = &binv_[static_cast<std::size_t>(leave) * rows_];
      for (int j = 0; j < rows_; ++j) prow[j] /= piv;
      for (int i = 0; i < rows_; ++i) {
        if (i == leave) continue;
        const double f = w[i];
        if (f == 0.0) continue;
        double* irow = &binv_[static_cast<std::size_t>(i) * rows_];
        for (int j = 0; j < rows_; ++j) irow[j] -= f * prow[j];
      }
      if (iters_ % (200 + rows_) == 0) refactorize();

      (void)enter_rc;
    }
    return false;
  }

  // Deterministic tie break on the ratio test: larger |pivot| first, then
  // smaller variable index (plain smallest index under Bland's rule).
  bool better_leave(int cand, int cur, const VecD& w) const {
    if (bland_) return basis_[cand] < basis_[cur];
    const double a = std::fabs(w[cand]);
    const double b = std::fabs(w[cur]);
    if (a > b + 1e-15) return true;
    if (b > a + 1e-15) return false;
    return basis_[cand] < basis_[cur];
  }

  void post_check(const LpSolution& sol) const {
    VecD ax(rows_, 0.0);
    for (const auto& e : p_.entries) ax[e.row] += e.value * sol.x[e.col];
    for (int i = 0; i < rows_; ++i) {
      const double resid = ax[i] - p_.rhs[i];
      bool ok = true;
      switch (p_.senses[i]) {
        case RowSense::kLe:
          ok = resid <= opt_.feasibility_tol;
          break;
        case RowSense::kGe:
          ok = resid >= -opt_.feasibility_tol;
          break;
        case RowSense::kEq:
          ok = std::fabs(resid) <= opt_.feasibility_tol;
          break;
      }
      if (!ok) {
        std::ostringstream os;
        os << "lp solution failed post-check on row " << i << " (residual " << resid << ")";
        throw SolverError(os.str());
      }
    }
    for (int j = 0; j < n_struct_; ++j) {
      if (sol.x[j] < lo_[j] - opt_.feasibility_tol || sol.x[j] > hi_[j] + opt_.feasibility_tol)
        throw SolverError("lp solution violates variable bounds");
    }
  }
};

}  // namespace

LpSolution solve(const LpProblem& problem, const SolveOptions& options) {
  if (problem.num_rows() == 0) {
    // Pure bound minimization.
    LpSolution sol;
    sol.x.assign(problem.num_vars, 0.0);
    for (int j = 0; j < problem.num_vars; ++j) {
      const double c = problem.objective[j];
      const auto& b = problem.bounds[j];
      if (c > 0) {
        if (b.lo == -kInf) {
          sol.status = LpStatus::kUnbounded;
          return sol;
        }
        sol.x[j] = b.lo;
      } else if (c < 0) {
        if (b.hi == kInf) {
          sol.status = LpStatus::kUnbounded;
          return sol;
        }
        sol.x[j] = b.hi;
      } else {
        sol.x[j] = (b.lo > -kInf) ? b.lo : (b.hi < kInf ? b.hi : 0.0);
      }
    }
    sol.status = LpStatus::kOptimal;
    sol.objective = dot(problem.objective, sol.x);
    return sol;
  }
  Simplex s(problem, options);
  return s.run();
}

namespace {
std::vector<std::uint64_t>& prime_cache() {
  static std::vector<std::uint64_t> primes = {2, 3, 5, 7, 11, 13};
  return primes;
}
}  // namespace

std::uint64_t nth_prime(std::size_t index) {
  auto& primes = prime_cache();
  while (primes.size() <= index) {
    std::uint64_t cand = primes.back() + 2;
    for (;;) {
      bool is_prime = true;
      for (std::uint64_t p : primes) {
        if (p * p > cand) break;
        if (cand % p == 0) {
          is_prime = false;
          break;
        }
      }
      if (is_prime) break;
      cand += 2;
    }
    primes.push_back(cand);
  }
  return primes[index];
}

Perturbed perturb_costs(const VecD& costs, const VecD& probabilities, double epsilon,
                        std::size_t prime_start) {
  Perturbed out;
  out.costs = costs;
  out.probabilities = probabilities;
  std::size_t t = prime_start;
  if (epsilon == 0.0) {
    out.next_prime_index = t;
    return out;
  }
  auto delta = [&](std::size_t idx) {
    const double scale = std::exp2(std::ceil(std::log2(static_cast<double>(idx) + 2.0)));
    return epsilon * std::sqrt(static_cast<double>(nth_prime(idx))) / scale;
  };
  for (auto& c : out.costs) c += delta(t++);
  double total = 0.0;
  for (auto& p : out.probabilities) {
    p += delta(t++);
    total += p;
  }
  if (!out.probabilities.empty() && total > 0.0)
    for (auto& p : out.probabilities) p /= total;
  out.next_prime_index = t;
  return out;
}

void dump_lp(const LpProblem& p, std::ostream& os, const std::string& name) {
  os << "\\ " << name << "\n";
  os << "Minimize\n obj:";
  for (int j = 0; j < p.num_vars; ++j) {
    if (p.objective[j] == 0.0) continue;
    os << (p.objective[j] >= 0 ? " + " : " - ") << std::fabs(p.objective[j]) << " x" << j;
  }
  os << "\nSubject To\n";
  std::vector<std::vector<std::pair<int, double>>> rows(p.num_rows());
  for (const auto& e : p.entries) rows[e.row].emplace_back(e.col, e.value);
  for (int i = 0; i < p.num_rows(); ++i) {
    os << " c" << i << ":";
    std::sort(rows[i].begin(), rows[i].end());
    for (const auto& [col, v] : rows[i])
      os << (v >= 0 ? " + " : " - ") << std::fabs(v) << " x" << col;
    switch (p.senses[i]) {
      case RowSense::kLe:
        os << " <= ";
        break;
      case RowSense::kGe:
        os << " >= ";
        break;
      case RowSense::kEq:
        os << " = ";
        break;
    }
    os << p.rhs[i] << "\n";
  }
  os << "Bounds\n";
  for (int j = 0; j < p.num_vars; ++j) {
    const auto& b = p.bounds[j];
    if (b.lo == -kInf && b.hi == kInf)
      os << " x" << j << " free\n";
    else if (b.hi == kInf)
      os << " x" << j << " >= " << b.lo << "\n";
    else if (b.lo == -kInf)
      os << " x" << j << " <= " << b.hi << "\n";
    else
      os << " " << b.lo << " <= x" << j << " <= " << b.hi << "\n";
  }
  os << "End\n";
}

}  // namespace lp
}  // namespace ato
