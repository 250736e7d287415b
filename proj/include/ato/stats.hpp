#pragma once

#include <utility>

#include "ato/common.hpp"

namespace ato {
namespace stats {

double mean(const VecD& xs);
double sample_variance(const VecD& xs);

// Two-sided Student-t interval over per-replication means.
std::pair<double, double> t_interval(const VecD& xs, double confidence);

double t_quantile(double p, int dof);

}  // namespace stats
}  // namespace ato
