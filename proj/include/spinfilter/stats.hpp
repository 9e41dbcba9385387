#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace spinfilter {

/// Pairwise (tree) summation. The reduction order depends only on the
/// length, so sums are reproducible across schedules.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double variance = 0.0;
  std::size_t count = 0;
};

inline MeanEstimate mean_estimate(std::span<const double> v) {
  MeanEstimate e;
  e.count = v.size();
  if (v.empty()) return e;
  e.mean = pairwise_sum(v) / static_cast<double>(v.size());
  if (v.size() > 1) {
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - e.mean) * (v[i] - e.mean);
    e.variance = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
    e.std_error = std::sqrt(e.variance / static_cast<double>(v.size()));
  }
  return e;
}

/// Batch-means estimate for a correlated series (e.g. a time average).
inline MeanEstimate batch_mean_estimate(std::span<const double> series, std::size_t batches) {
  if (batches < 2 || series.size() < 2 * batches) return mean_estimate(series);
  const std::size_t len = series.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    means[b] = pairwise_sum(series.subspan(b * len, len)) / static_cast<double>(len);
  }
  MeanEstimate e = mean_estimate(means);
  e.count = len * batches;
  return e;
}

/// Numerically stable log(sum(exp(v))).
inline double log_sum_exp(std::span<const double> v) {
  double m = -INFINITY;
  for (double x : v) m = x > m ? x : m;
  if (!std::isfinite(m)) return m;
  std::vector<double> e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) e[i] = std::exp(v[i] - m);
  return m + std::log(pairwise_sum(e));
}

}  // namespace spinfilter
