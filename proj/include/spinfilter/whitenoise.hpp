#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spinfilter/filter.hpp"
#include "spinfilter/observation.hpp"

namespace spinfilter {

/// Observation values y(t) on a uniform grid. y_n is the value on
/// [t_n, t_{n+1}); the broadband reading of an increment record is
/// y_n = dY_n / dt_obs.
struct WhiteNoiseRecord {
  double dt = 0.0;
  std::size_t channels = 0;
  std::vector<double> values;  ///< steps x channels

  [[nodiscard]] std::size_t steps() const { return channels == 0 ? 0 : values.size() / channels; }
  [[nodiscard]] double horizon() const { return static_cast<double>(steps()) * dt; }
  [[nodiscard]] std::span<const double> value(std::size_t n) const { return {values.data() + n * channels, channels}; }
  void validate() const;
};

WhiteNoiseRecord white_noise_from_increments(const ObservationPath& obs);
ObservationPath increments_from_white_noise(const WhiteNoiseRecord& y);

/// Log-weight (y, zeta) - |zeta|^2 / 2 with trapezoid quadrature on the
/// record grid; zeta holds h(X) at the nodes 0..steps, row-major.
double wn_log_weight(const WhiteNoiseRecord& y, std::span<const double> zeta);

/// Bayes formula for the white-noise model over n_mc prior paths. Uses
/// the same paths as ks_posterior for an equal seed.
PosteriorEstimate wn_bayes(const WhiteNoiseRecord& y, const FilteringProblem& problem, const GaussianPrior& prior,
                           std::size_t n_mc, std::span<const TestFunction> functions, std::uint64_t seed);

/// One step of the unnormalized measure recursion: propagate over dt, then
/// multiply each weight by exp(c dt) with c = (h, y) - |h|^2 / 2 averaged
/// over the interval endpoints. The record position is ens.obs_steps.
void wn_measure_step(ParticleEnsemble& ens, const WhiteNoiseRecord& y, const FilteringProblem& problem,
                     const FilterConfig& config);

/// Runs wn_measure_step until ens.obs_steps reaches `until` (capped at the
/// record length). Restarting from a saved ensemble reproduces the run.
void advance_wn_filter(ParticleEnsemble& ens, const WhiteNoiseRecord& y, std::size_t until,
                       const FilteringProblem& problem, const FilterConfig& config, const FilterObserver& observer = {});

/// Full run from the prior; records follow run_particle_filter.
FilterRun run_wn_filter(const WhiteNoiseRecord& y, const FilteringProblem& problem, const GaussianPrior& prior,
                        const FilterConfig& config, std::span<const TestFunction> dictionary);

/// Fixed perturbation direction: sqrt(2/T) sin(pi t / T) at the cell
/// midpoints, the same on every channel (unit L2 norm per channel).
WhiteNoiseRecord perturbation_profile(const WhiteNoiseRecord& y);

struct RobustnessReport {
  std::vector<double> eps;
  std::vector<double> distance;  ///< replica mean of ensemble_distance(pi^{y + eps p}, pi^y)
  std::vector<double> distance_se;
  bool monotone = false;  ///< non-increasing in eps within 2 sigma
  double modulus = 0.0;   ///< max distance / eps over eps > 0
  std::size_t replicas = 0;
};

RobustnessReport wn_robustness(const WhiteNoiseRecord& y, std::span<const double> eps, const FilteringProblem& problem,
                               const GaussianPrior& prior, const FilterConfig& config,
                               std::span<const TestFunction> dictionary, std::size_t replicas = 8);

}  // namespace spinfilter
