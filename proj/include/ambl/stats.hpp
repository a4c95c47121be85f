#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace ambl::stats {

struct StatResult {
  double statistic = 0.0;  // U of the first sample, or a correlation coefficient
  double p_value = 1.0;    // two-sided
  int n1 = 0;
  int n2 = 0;              // second sample size; for correlations equals n1
  bool exact = false;
};

// 1-based ranks with ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> xs);

// Two-sided Mann-Whitney U. Exact permutation distribution of the midrank sum
// when n1·n2 <= 400; otherwise the tie-corrected normal approximation with
// continuity correction (p = 1 when the variance vanishes).
StatResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

inline constexpr int kExactLimit = 400;

StatResult mann_whitney_exact(std::span<const double> a, std::span<const double> b);
StatResult mann_whitney_normal(std::span<const double> a, std::span<const double> b);

class UndefinedStatistic : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Correlations over paired samples of length >= 3; p from Student's t with
// n-2 degrees of freedom. Constant input throws UndefinedStatistic.
StatResult pearson_r(std::span<const double> xs, std::span<const double> ys);
StatResult spearman_rho(std::span<const double> xs, std::span<const double> ys);

double median(std::vector<double> xs);  // throws on empty input

}  // namespace ambl::stats
