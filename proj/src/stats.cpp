#include "ato/stats.hpp"

#include <cmath>

#include <boost/math/distributions/students_t.hpp>

namespace ato {
namespace stats {

double mean(const VecD& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_variance(const VecD& xs) {
  const double mu = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return s / static_cast<double>(xs.size() - 1);
}

double t_quantile(double p, int dof) {
  const boost::math::students_t dist(static_cast<double>(dof));
  return boost::math::quantile(dist, p);
}

std::pair<double, double> t_interval(const VecD& xs, double confidence) {
  if (xs.size() < 2) throw ValidationError("t interval needs at least two samples");
  const double mu = mean(xs);
  const double se = std::sqrt(sample_variance(xs) / static_cast<double>(xs.size()));
  const double q = t_quantile(0.5 + confidence / 2.0, static_cast<int>(xs.size()) - 1);
  return {mu - q * se, mu + q * se};
}

}  // namespace stats
}  // namespace ato
