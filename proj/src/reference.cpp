#include "spinfilter/reference.hpp"

#include <cmath>

#include "spinfilter/errors.hpp"

namespace spinfilter {

double riccati_solution(const ScalarLinearGaussian& m, double t) {
  if (m.p0 < 0.0) throw ConfigError("prior variance must be >= 0");
  // P' = 2 a' P + q - r P^2
  const double ap = m.a - m.h * m.b * m.sigma2;
  const double q = m.b * m.b * m.sigma1 * m.sigma1;
  const double r = m.h * m.h;
  if (r == 0.0) {
    if (ap == 0.0) return m.p0 + q * t;
    return m.p0 * std::exp(2.0 * ap * t) + q * std::expm1(2.0 * ap * t) / (2.0 * ap);
  }
  const double d = std::sqrt(ap * ap + r * q);
  const double p_plus = (ap + d) / r;
  const double u0 = m.p0 - p_plus;
  if (d == 0.0) return p_plus + u0 / (1.0 + r * u0 * t);
  // u = P - P+ solves u' = -2 d u - r u^2
  const double e = std::exp(-2.0 * d * t);
  return p_plus + u0 * 2.0 * d * e / (2.0 * d - r * u0 * std::expm1(-2.0 * d * t));
}

KalmanTrack kalman_bucy(const ScalarLinearGaussian& m, const ObservationPath& obs) {
  if (obs.channels != 1) throw ConfigError("Kalman-Bucy reference is scalar");
  const double dt = obs.dt_obs;
  KalmanTrack tr;
  const std::size_t steps = obs.steps();
  tr.t.resize(steps + 1);
  tr.mean.resize(steps + 1);
  tr.variance.resize(steps + 1);
  tr.t[0] = 0.0;
  tr.mean[0] = m.m0;
  tr.variance[0] = m.p0;
  double mean = m.m0;
  for (std::size_t n = 0; n < steps; ++n) {
    const double t0 = static_cast<double>(n) * dt;
    const double k = riccati_solution(m, t0 + 0.5 * dt) * m.h + m.b * m.sigma2;
    const double g = m.a - k * m.h;
    const double rate = obs.increments[n] / dt;
    const double e = std::exp(g * dt);
    const double phi = g == 0.0 ? dt : std::expm1(g * dt) / g;
    mean = e * mean + k * rate * phi;
    tr.t[n + 1] = t0 + dt;
    tr.mean[n + 1] = mean;
    tr.variance[n + 1] = riccati_solution(m, t0 + dt);
  }
  return tr;
}

double relative_l1_error(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size()) throw ConfigError("series lengths differ");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    num += std::abs(estimate[i] - reference[i]);
    den += std::abs(reference[i]);
  }
  return den > 0.0 ? num / den : num;
}

}  // namespace spinfilter
