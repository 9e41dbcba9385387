#pragma once

#include <vector>

#include "spinfilter/observation.hpp"

namespace spinfilter {

/// dX = a X dt + b (sigma1 dW + sigma2 dZ),  dY = h X dt + dZ,  X_0 ~ N(m0, p0).
struct ScalarLinearGaussian {
  double a = -1.0;
  double b = 1.0;
  double h = 1.0;
  double sigma1 = 1.0;
  double sigma2 = 0.0;
  double m0 = 0.0;
  double p0 = 1.0;
};

/// Posterior variance P(t) in closed form. With correlated noise the
/// Riccati equation is P' = 2aP + b^2(sigma1^2 + sigma2^2) - (Ph + b sigma2)^2.
double riccati_solution(const ScalarLinearGaussian& m, double t);

struct KalmanTrack {
  std::vector<double> t;
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Kalman-Bucy filter along the observation grid. The mean is advanced with
/// the gain frozen at the interval midpoint and the increment read as a
/// constant rate, which is exact for piecewise-linear Y.
KalmanTrack kalman_bucy(const ScalarLinearGaussian& m, const ObservationPath& obs);

/// sum |est - ref| / sum |ref| over matching entries.
double relative_l1_error(std::span<const double> estimate, std::span<const double> reference);

}  // namespace spinfilter
