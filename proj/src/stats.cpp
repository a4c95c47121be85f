#include "ambl/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

namespace ambl::stats {

std::vector<double> midranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
    i = j + 1;
  }
  return r;
}

namespace {

void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be non-empty");
  for (auto s : {a, b}) {
    for (double x : s) {
      if (std::isnan(x)) throw std::invalid_argument("mann_whitney_u: NaN in sample");
    }
  }
}

struct Pooled {
  std::vector<double> ranks;  // a's entries first
  double rank_sum_a = 0.0;
  double u_a = 0.0;
};

Pooled pool(std::span<const double> a, std::span<const double> b) {
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  Pooled p;
  p.ranks = midranks(all);
  for (std::size_t i = 0; i < a.size(); ++i) p.rank_sum_a += p.ranks[i];
  const double n1 = static_cast<double>(a.size());
  p.u_a = p.rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  return p;
}

}  // namespace

StatResult mann_whitney_exact(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const Pooled p = pool(a, b);
  const int n1 = static_cast<int>(a.size());
  const int total = static_cast<int>(p.ranks.size());

  // Doubled midranks are integers. ways[k][s]: subsets of size k with doubled rank sum s.
  std::vector<int> r2(total);
  for (int i = 0; i < total; ++i) r2[i] = static_cast<int>(std::lround(2.0 * p.ranks[i]));
  const int max_sum = std::accumulate(r2.begin(), r2.end(), 0);
  std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(max_sum + 1, 0.0));
  ways[0][0] = 1.0;
  int reach = 0;
  for (int i = 0; i < total; ++i) {
    reach += r2[i];
    for (int k = std::min(i + 1, n1); k >= 1; --k) {
      auto& dst = ways[k];
      const auto& src = ways[k - 1];
      for (int s = reach; s >= r2[i]; --s) dst[s] += src[s - r2[i]];
    }
  }
  const int observed = static_cast<int>(std::lround(2.0 * p.rank_sum_a));
  double le = 0.0, ge = 0.0, all = 0.0;
  for (int s = 0; s <= max_sum; ++s) {
    const double w = ways[n1][s];
    all += w;
    if (s <= observed) le += w;
    if (s >= observed) ge += w;
  }
  StatResult r;
  r.statistic = p.u_a;
  r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
  r.n1 = n1;
  r.n2 = static_cast<int>(b.size());
  r.exact = true;
  return r;
}

StatResult mann_whitney_normal(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const Pooled p = pool(a, b);
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  std::vector<double> sorted = p.ranks;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  StatResult r;
  r.statistic = p.u_a;
  r.n1 = static_cast<int>(n1);
  r.n2 = static_cast<int>(n2);
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = (std::abs(p.u_a - n1 * n2 / 2.0) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

StatResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  if (a.size() * b.size() <= static_cast<std::size_t>(kExactLimit)) return mann_whitney_exact(a, b);
  return mann_whitney_normal(a, b);
}

namespace {

double pearson_coefficient(std::span<const double> x, std::span<const double> y, const char* who) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedStatistic(std::string(who) + ": constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

StatResult correlation_result(double r, std::size_t n) {
  StatResult out;
  out.statistic = r;
  out.n1 = out.n2 = static_cast<int>(n);
  const double df = static_cast<double>(n) - 2.0;
  if (std::abs(r) >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = r * std::sqrt(df / (1.0 - r * r));
    boost::math::students_t dist(df);
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  }
  return out;
}

void check_pairs(std::span<const double> xs, std::span<const double> ys, const char* who) {
  if (xs.size() != ys.size()) throw std::invalid_argument(std::string(who) + ": length mismatch");
  if (xs.size() < 3) throw std::invalid_argument(std::string(who) + ": at least 3 pairs required");
}

}  // namespace

StatResult pearson_r(std::span<const double> xs, std::span<const double> ys) {
  check_pairs(xs, ys, "pearson_r");
  return correlation_result(pearson_coefficient(xs, ys, "pearson_r"), xs.size());
}

StatResult spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  check_pairs(xs, ys, "spearman_rho");
  const auto rx = midranks(xs), ry = midranks(ys);
  return correlation_result(pearson_coefficient(rx, ry, "spearman_rho"), xs.size());
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace ambl::stats
