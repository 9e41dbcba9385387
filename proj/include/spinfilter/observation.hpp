#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spinfilter/dynamics.hpp"
#include "spinfilter/model.hpp"
#include "spinfilter/rng.hpp"

namespace spinfilter {

enum class SensorKind {
  linear,         ///< h_c(x) = sum_gamma w_{c gamma} x_gamma
  componentwise,  ///< h_c(x) = g(x_{site_c})
};

/// Sensor map h : R^|Lambda| -> R^N.
class SensorSpec {
 public:
  SensorSpec() = default;

  /// `weights` is row-major, channels x sites.
  static SensorSpec linear(std::vector<double> weights, std::size_t channels);
  static SensorSpec componentwise(Polynomial g, std::vector<std::size_t> sites);
  /// Identity on every site (h(x) = x).
  static SensorSpec identity(std::size_t sites);
  /// N-channel sensor that observes nothing (h = 0).
  static SensorSpec null(std::size_t channels, std::size_t sites);

  [[nodiscard]] SensorKind kind() const { return kind_; }
  [[nodiscard]] std::size_t channels() const { return channels_; }
  [[nodiscard]] bool is_zero() const;
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }
  [[nodiscard]] const Polynomial& g() const { return g_; }
  [[nodiscard]] const std::vector<std::size_t>& sites() const { return sites_; }

  void evaluate(std::span<const double> x, std::span<double> out) const;
  [[nodiscard]] std::vector<double> operator()(std::span<const double> x) const;

  /// Checks shapes against the lattice and fits the growth constant C with
  /// |h(x)| <= C (1 + |x|^p) on rays through coordinate and diagonal directions.
  void validate(std::size_t site_count);
  [[nodiscard]] double growth_exponent() const { return growth_p_; }
  [[nodiscard]] double growth_constant() const { return growth_c_; }

 private:
  SensorKind kind_ = SensorKind::linear;
  std::size_t channels_ = 0;
  std::size_t site_count_ = 0;
  std::vector<double> weights_;
  Polynomial g_;
  std::vector<std::size_t> sites_;
  double growth_p_ = 1.0;
  double growth_c_ = 0.0;
};

/// Increments of Y on a uniform observation grid, row-major steps x channels.
struct ObservationPath {
  double dt_obs = 0.0;
  std::size_t channels = 0;
  std::vector<double> increments;
  double sigma1 = 1.0;
  double sigma2 = 0.0;

  [[nodiscard]] std::size_t steps() const { return channels == 0 ? 0 : increments.size() / channels; }
  [[nodiscard]] double horizon() const { return static_cast<double>(steps()) * dt_obs; }
  [[nodiscard]] std::span<const double> increment(std::size_t n) const {
    return {increments.data() + n * channels, channels};
  }
};

/// Number of dynamics steps per observation step; throws ConfigError unless
/// dt_obs is an integer multiple of dt.
std::size_t substeps_per_observation(double dt, double dt_obs);

/// dY_n = h(X_{t_n}) dt_obs + dZ_n. The Z increments are sums of the per
/// dynamics-step observation-noise draws keyed by (index, channel, step),
/// which are the same draws a correlated signal injects (sigma2 != 0).
/// `dt` is the dynamics step the signal was produced with.
ObservationPath generate_observations(const SignalPath& signal, const SensorSpec& sensor, const NoiseSpec& noise,
                                      double dt, double dt_obs, const CounterRng& rng, std::uint32_t index = 0,
                                      bool noiseless = false);

struct ObservedSignal {
  SignalPath signal;
  ObservationPath observations;
};

/// Jointly simulated signal and observations for path `index`.
ObservedSignal simulate_observed(std::span<const double> x0, const Model& model, const SensorSpec& sensor,
                                 const SimConfig& config, double dt_obs, std::uint32_t index = 0);

/// Merges `factor` consecutive increments.
ObservationPath aggregate(const ObservationPath& obs, std::size_t factor);

/// h(x) . dY - |h(x)|^2 dt_obs / 2
double log_likelihood_increment(std::span<const double> x, std::span<const double> dy, double dt_obs,
                                const SensorSpec& sensor);
/// Same, from precomputed sensor values.
double log_likelihood_from_h(std::span<const double> h, std::span<const double> dy, double dt_obs);

struct InnovationReport {
  std::vector<double> increments;        ///< steps x channels
  std::vector<double> quadratic_variation;
  std::vector<double> mean_rate;         ///< mean of dnu / dt per channel
  std::vector<double> lag1_autocorrelation;
  std::size_t steps = 0;
};

/// dnu_n = dY_n - pi_{t_n}[h] dt_obs from one estimate row per step.
InnovationReport innovation_path(const ObservationPath& obs, std::span<const double> h_estimates);

}  // namespace spinfilter
