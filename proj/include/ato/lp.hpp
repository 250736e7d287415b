#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "ato/common.hpp"

namespace ato {
namespace lp {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowSense { kLe, kGe, kEq };

struct Bound {
  double lo = -kInf;
  double hi = kInf;
};

// Minimization problem over sparse rows with per-variable bounds.
struct LpProblem {
  int num_vars = 0;
  VecD objective;
  std::vector<Bound> bounds;

  struct Entry {
    int row;
    int col;
    double value;
  };
  std::vector<Entry> entries;
  VecD rhs;
  std::vector<RowSense> senses;

  int num_rows() const { return static_cast<int>(rhs.size()); }

  int add_variable(double cost, Bound bound = Bound{});
  int add_row(RowSense sense, double rhs_value);
  void set(int row, int col, double value);
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded };

struct LpSolution {
  LpStatus status = LpStatus::kInfeasible;
  VecD x;
  double objective = 0.0;
  long iterations = 0;
};

struct SolveOptions {
  long iteration_limit = 1000000;
  double feasibility_tol = 1e-8;   // post-hoc absolute row feasibility
  double reduced_cost_tol = 1e-9;  // optimality
  double pivot_tol = 1e-9;
};

// Two-phase bounded-variable revised simplex. Deterministic: Dantzig pricing
// with smallest-index tie breaks, switching to Bland's rule under extended
// degeneracy, so identical inputs give identical solutions.
LpSolution solve(const LpProblem& problem, const SolveOptions& options = {});

struct Perturbed {
  VecD costs;
  VecD probabilities;
  std::size_t next_prime_index = 0;
};

// Deterministic tie-breaking offsets: entry t gains
// epsilon*sqrt(prime_t)/2^ceil(log2(t+2)) with a running prime index across
// the cost vector and then the probability vector; probabilities are
// renormalized. epsilon == 0 is the identity.
Perturbed perturb_costs(const VecD& costs, const VecD& probabilities, double epsilon,
                        std::size_t prime_start = 0);

// n-th prime (0-based: prime(0) == 2).
std::uint64_t nth_prime(std::size_t index);

// Text dump in LP interchange format for cross-checking with other solvers.
void dump_lp(const LpProblem& problem, std::ostream& os, const std::string& name = "lp");

}  // namespace lp
}  // namespace ato
