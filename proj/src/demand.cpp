#include "ato/demand.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ato/rng.hpp"

namespace ato {

DemandModel DemandModel::independent_poisson(const VecD& rates) {
  DemandModel md;
  md.m_ = static_cast<int>(rates.size());
  md.independent_ = true;
  md.rates_ = rates;
  md.order_rate_ = 0.0;
  for (double r : rates) {
    if (r < 0.0 || !std::isfinite(r)) throw ValidationError("negative demand rate");
    md.order_rate_ += r;
  }
  // Merged representation: an order is a unit of product i w.p. rate_i/total.
  if (md.order_rate_ > 0.0) {
    double acc = 0.0;
    for (int i = 0; i < md.m_; ++i) {
      if (rates[i] <= 0.0) continue;
      VecI s(md.m_, 0);
      s[i] = 1;
      md.size_atoms_.emplace_back(std::move(s), rates[i] / md.order_rate_);
      acc += rates[i] / md.order_rate_;
      md.size_cdf_.push_back(acc);
    }
    if (!md.size_cdf_.empty()) md.size_cdf_.back() = 1.0;
  }
  return md;
}

DemandModel DemandModel::joint_pmf(double order_rate,
                                   std::vector<std::pair<VecI, double>> size_atoms) {
  DemandModel md;
  md.independent_ = false;
  md.order_rate_ = order_rate;
  if (order_rate < 0.0 || !std::isfinite(order_rate))
    throw ValidationError("negative order rate");
  if (size_atoms.empty()) throw ValidationError("empty size pmf");
  md.m_ = static_cast<int>(size_atoms.front().first.size());
  double total = 0.0;
  for (auto& [s, p] : size_atoms) {
    if (static_cast<int>(s.size()) != md.m_) throw ValidationError("ragged size pmf");
    bool all_zero = true;
    for (auto v : s) {
      if (v < 0) throw ValidationError("negative order size");
      all_zero = all_zero && v == 0;
    }
    if (all_zero && p > 0.0) throw ValidationError("size pmf has mass at the zero vector");
    if (p < 0.0) throw ValidationError("negative size probability");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ValidationError("size pmf does not sum to 1");
  double acc = 0.0;
  for (auto& [s, p] : size_atoms) {
    md.size_atoms_.emplace_back(s, p / total);
    acc += p / total;
    md.size_cdf_.push_back(acc);
  }
  md.size_cdf_.back() = 1.0;
  return md;
}

VecD DemandModel::mean_rate() const {
  VecD mu(m_, 0.0);
  for (const auto& [s, p] : size_atoms_)
    for (int i = 0; i < m_; ++i) mu[i] += order_rate_ * p * static_cast<double>(s[i]);
  return mu;
}

std::size_t DemandPath::first_after(double t) const {
  return std::upper_bound(times.begin(), times.end(), t) - times.begin();
}

VecI DemandPath::window(double t1, double t2) const {
  if (!(t1 < t2)) throw ValidationError("window requires t1 < t2");
  const std::size_t lo = first_after(t1);
  const std::size_t hi = first_after(t2);
  VecI out = cumulative[hi];
  isub(out, cumulative[lo]);
  return out;
}

VecI window_demand(const DemandPath& path, double t1, double t2) {
  return path.window(t1, t2);
}

DemandPath sample_path(const DemandModel& model, double t_start, double t_end,
                       std::uint64_t seed, std::uint64_t stream) {
  if (!(t_start < t_end)) throw ValidationError("sample_path requires t_start < t_end");
  DemandPath path;
  path.t_start = t_start;
  path.t_end = t_end;
  path.seed = seed;
  path.stream = stream;
  path.num_products = model.num_products();
  path.cumulative.push_back(VecI(model.num_products(), 0));
  if (model.order_rate() <= 0.0) return path;

  Philox rng(seed, stream);
  VecI running(model.num_products(), 0);
  double t = t_start;
  const auto& atoms = model.size_atoms();
  const auto& cdf = model.size_cdf_;
  for (;;) {
    t += rng.exponential(model.order_rate());
    if (t > t_end) break;
    const double u = rng.uniform();
    const std::size_t idx =
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    const VecI& s = atoms[std::min(idx, atoms.size() - 1)].first;
    path.times.push_back(t);
    path.sizes.push_back(s);
    iadd(running, s);
    path.cumulative.push_back(running);
  }
  return path;
}

namespace {

// Poisson pmf over 0..M with the upper tail lumped at M.
VecD truncated_poisson(double mean, std::int64_t M) {
  VecD p(static_cast<std::size_t>(M) + 1, 0.0);
  if (mean <= 0.0) {
    p[0] = 1.0;
    return p;
  }
  double below = 0.0;
  if (mean < 700.0) {
    double term = std::exp(-mean);
    for (std::int64_t r = 0; r < M; ++r) {
      p[r] = term;
      below += term;
      term *= mean / static_cast<double>(r + 1);
    }
  } else {
    for (std::int64_t r = 0; r < M; ++r) {
      p[r] = std::exp(-mean + r * std::log(mean) - std::lgamma(r + 1.0));
      below += p[r];
    }
  }
  p[M] = std::max(0.0, 1.0 - below);
  return p;
}

}  // namespace

const std::vector<std::pair<VecI, double>>& WindowPmf::atoms() const {
  if (!atoms_built_) {
    atoms_.clear();
    const int m = num_products();
    VecI d(m, 0);
    // Cross product of marginal supports in lexicographic order.
    for (;;) {
      double p = 1.0;
      for (int i = 0; i < m; ++i) p *= marginals_[i][d[i]];
      if (p > 0.0) atoms_.emplace_back(d, p);
      int i = m - 1;
      while (i >= 0) {
        if (++d[i] <= clamp_[i]) break;
        d[i] = 0;
        --i;
      }
      if (i < 0) break;
    }
    atoms_built_ = true;
  }
  return atoms_;
}

double WindowPmf::support_size() const {
  double s = 1.0;
  for (auto c : clamp_) s *= static_cast<double>(c + 1);
  return s;
}

VecD WindowPmf::mean() const {
  VecD mu(num_products(), 0.0);
  for (int i = 0; i < num_products(); ++i)
    for (std::int64_t r = 0; r <= clamp_[i]; ++r)
      mu[i] += static_cast<double>(r) * marginals_[i][r];
  return mu;
}

double WindowPmf::total_mass() const {
  if (product_form_) {
    double t = 1.0;
    for (const auto& mg : marginals_) {
      double s = 0.0;
      for (double p : mg) s += p;
      t *= s;
    }
    return t;
  }
  double t = 0.0;
  for (const auto& [d, p] : atoms()) t += p;
  return t;
}

WindowPmf window_distribution_clamped(const DemandModel& model, double duration,
                                      const VecI& clamp) {
  if (duration < 0.0) throw ValidationError("window duration must be non-negative");
  const int m = model.num_products();
  WindowPmf pmf;
  pmf.duration_ = duration;
  pmf.clamp_ = clamp;
  for (auto c : clamp)
    if (c < 0) throw ValidationError("clamp level must be non-negative");

  if (model.is_independent_poisson()) {
    pmf.product_form_ = true;
    pmf.marginals_.resize(m);
    for (int i = 0; i < m; ++i)
      pmf.marginals_[i] = truncated_poisson(model.product_rates()[i] * duration, clamp[i]);
    return pmf;
  }

  // General compound Poisson: convolve the size pmf with the Poisson order
  // count; componentwise clamping of intermediates is exact for the clamped
  // target because sizes are non-negative. The only approximation is the
  // order-count cutoff at residual mass 1e-12.
  pmf.product_form_ = false;
  std::vector<std::size_t> stride(m, 1);
  std::size_t cells = 1;
  for (int i = m - 1; i >= 0; --i) {
    stride[i] = cells;
    cells *= static_cast<std::size_t>(clamp[i] + 1);
  }
  auto clamp_index = [&](const VecI& d) {
    std::size_t idx = 0;
    for (int i = 0; i < m; ++i)
      idx += stride[i] * static_cast<std::size_t>(std::min(d[i], clamp[i]));
    return idx;
  };

  const double lam = model.order_rate() * duration;
  VecD acc(cells, 0.0);
  VecD cur(cells, 0.0);  // pmf of the clamped r-fold size sum
  cur[0] = 1.0;
  double pois = std::exp(-lam);
  double seen = pois;
  acc[0] += pois;  // r = 0 contributes a point mass at zero
  std::int64_t r = 0;
  while (1.0 - seen >= 1e-12) {
    ++r;
    // cur <- clamp(cur + S)
    VecD next(cells, 0.0);
    VecI d(m, 0);
    for (std::size_t idx = 0; idx < cells; ++idx) {
      if (cur[idx] > 0.0) {
        for (const auto& [s, ps] : model.size_atoms()) {
          VecI e = d;
          iadd(e, s);
          next[clamp_index(e)] += cur[idx] * ps;
        }
      }
      int i = m - 1;
      while (i >= 0) {
        if (++d[i] <= clamp[i]) break;
        d[i] = 0;
        --i;
      }
    }
    cur.swap(next);
    pois *= lam / static_cast<double>(r);
    seen += pois;
    for (std::size_t idx = 0; idx < cells; ++idx) acc[idx] += pois * cur[idx];
    if (r > 100000) throw SolverError("order count truncation failed to converge");
  }

  VecI d(m, 0);
  for (std::size_t idx = 0; idx < cells; ++idx) {
    if (acc[idx] > 0.0) pmf.atoms_.emplace_back(d, acc[idx]);
    int i = m - 1;
    while (i >= 0) {
      if (++d[i] <= clamp[i]) break;
      d[i] = 0;
      --i;
    }
  }
  pmf.atoms_built_ = true;
  pmf.marginals_.assign(m, VecD());
  for (int i = 0; i < m; ++i) pmf.marginals_[i].assign(clamp[i] + 1, 0.0);
  for (const auto& [dd, p] : pmf.atoms_)
    for (int i = 0; i < m; ++i) pmf.marginals_[i][dd[i]] += p;
  return pmf;
}

WindowPmf window_distribution(const DemandModel& model, double duration, std::int64_t M) {
  return window_distribution_clamped(model, duration, VecI(model.num_products(), M));
}

WindowPmf WindowPmf::from_atoms(double duration, const VecI& clamp,
                                std::vector<std::pair<VecI, double>> atoms) {
  WindowPmf pmf;
  pmf.duration_ = duration;
  pmf.clamp_ = clamp;
  pmf.product_form_ = false;
  pmf.atoms_ = std::move(atoms);
  pmf.atoms_built_ = true;
  const int m = static_cast<int>(clamp.size());
  pmf.marginals_.assign(m, VecD());
  for (int i = 0; i < m; ++i) pmf.marginals_[i].assign(clamp[i] + 1, 0.0);
  for (const auto& [d, p] : pmf.atoms_)
    for (int i = 0; i < m; ++i) pmf.marginals_[i][std::min(d[i], clamp[i])] += p;
  return pmf;
}

VecI default_clamp(const DemandModel& model, double duration) {
  const VecD mu = model.mean_rate();
  VecI clamp(model.num_products(), 0);
  for (int i = 0; i < model.num_products(); ++i) {
    const double mean = mu[i] * duration;
    clamp[i] = static_cast<std::int64_t>(std::ceil(mean + 6.0 * std::sqrt(mean)));
  }
  return clamp;
}

Moments moments(const DemandModel& model, double duration) {
  if (duration < 0.0) throw ValidationError("duration must be non-negative");
  const int m = model.num_products();
  Moments mo;
  mo.mean.assign(m, 0.0);
  mo.covariance.assign(m, VecD(m, 0.0));
  const double lam = model.order_rate() * duration;
  for (const auto& [s, p] : model.size_atoms()) {
    for (int i = 0; i < m; ++i) {
      mo.mean[i] += lam * p * static_cast<double>(s[i]);
      for (int j = 0; j < m; ++j)
        mo.covariance[i][j] += lam * p * static_cast<double>(s[i]) * static_cast<double>(s[j]);
    }
  }
  return mo;
}

}  // namespace ato
