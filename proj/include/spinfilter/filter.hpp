#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spinfilter/dynamics.hpp"
#include "spinfilter/functionals.hpp"
#include "spinfilter/model.hpp"
#include "spinfilter/observation.hpp"

namespace spinfilter {

enum class Resampling { systematic, multinomial };

struct FilterConfig {
  std::size_t n_particles = 1000;
  double resample_threshold = 0.5;  ///< resample when ESS / n falls below this
  Resampling resampling = Resampling::systematic;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Signal model, sensor and time discretization shared by all filters.
struct FilteringProblem {
  Model model;
  SensorSpec sensor;
  double dt = 1e-3;
  double dt_obs = 1e-2;
  Scheme scheme = Scheme::split_step;

  void validate();
  [[nodiscard]] std::size_t substeps() const { return substeps_per_observation(dt, dt_obs); }
};

/// Independent Gaussian prior per site (single values broadcast).
struct GaussianPrior {
  std::vector<double> mean{0.0};
  std::vector<double> std{1.0};

  [[nodiscard]] double mean_at(std::size_t site) const { return mean.size() == 1 ? mean[0] : mean[site]; }
  [[nodiscard]] double std_at(std::size_t site) const { return std.size() == 1 ? std[0] : std[site]; }
  void sample(const CounterRng& rng, std::uint32_t index, std::span<double> out) const;
};

/// Weighted particle cloud for pi_t (normalized) and theta_t (unnormalized).
/// `log_weights` are kept normalized (log-sum-exp = 0); `log_mass` carries
/// log theta_t(1).
struct ParticleEnsemble {
  std::size_t dim = 0;
  std::vector<double> particles;  ///< row-major n x dim
  std::vector<double> log_weights;
  double log_mass = 0.0;
  double t = 0.0;
  std::size_t obs_steps = 0;  ///< observation steps processed (drives RNG counters)
  std::size_t resample_count = 0;

  [[nodiscard]] std::size_t size() const { return log_weights.size(); }
  [[nodiscard]] std::span<const double> particle(std::size_t i) const { return {particles.data() + i * dim, dim}; }
  [[nodiscard]] std::span<double> particle(std::size_t i) { return {particles.data() + i * dim, dim}; }
  [[nodiscard]] std::vector<double> normalized_weights() const;
  [[nodiscard]] double ess() const;
};

ParticleEnsemble initialize_ensemble(const GaussianPrior& prior, std::size_t dim, const FilterConfig& config);

/// Mutation (dynamics over dt_obs), reweighting by the likelihood increment,
/// Zakai mass update, and ESS-triggered resampling. The likelihood is taken
/// at the state entering the interval (Ito convention).
void pf_step(ParticleEnsemble& ens, std::span<const double> dy, const FilteringProblem& problem,
             const FilterConfig& config);

/// As pf_step, but the sigma2 part of the signal noise is replaced by the
/// observed innovation sigma2 (dY - h(X) dt_obs), spread evenly over the
/// dynamics substeps. Reduces bitwise to pf_step when sigma2 = 0.
void correlated_pf_step(ParticleEnsemble& ens, std::span<const double> dy, const FilteringProblem& problem,
                        const FilterConfig& config);

/// Building blocks of pf_step. mutate_ensemble propagates every particle
/// over one observation interval (draws keyed by ens.obs_steps) and returns
/// 0, or -inf for particles that left the finite range.
std::vector<double> mutate_ensemble(ParticleEnsemble& ens, const FilteringProblem& problem,
                                    const FilterConfig& config);
/// Adds `ll` to the log-weights, updates log_mass, advances the step counter
/// and resamples when the ESS fraction drops below the threshold.
void reweight_ensemble(ParticleEnsemble& ens, std::span<const double> ll, double dt_obs, const FilterConfig& config);

/// sum_i w_i f(x_i)
double posterior_moment(const ParticleEnsemble& ens, const TestFunction& f);
/// exp(log_mass) * posterior_moment
double zakai_moment(const ParticleEnsemble& ens, const TestFunction& f);

/// max over the dictionary of |pi_a[f] - pi_b[f]|
double ensemble_distance(const ParticleEnsemble& a, const ParticleEnsemble& b,
                         std::span<const TestFunction> dictionary);

/// Resampling kernels: ancestor indices from normalized weights and one
/// uniform (systematic) or n uniforms (multinomial).
std::vector<std::size_t> systematic_resample(std::span<const double> weights, double u);
std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::span<const double> uniforms);

/// Forces a resampling pass using the configured scheme and step counter.
void resample(ParticleEnsemble& ens, const FilterConfig& config);

struct FilterRecord {
  double t = 0.0;
  std::vector<double> moments;  ///< one per dictionary entry
  double ess = 0.0;
  double log_mass = 0.0;
  bool resampled = false;
};

using FilterObserver = std::function<void(const ParticleEnsemble&, std::size_t step)>;

struct FilterRun {
  std::vector<FilterRecord> records;  ///< records[0] is the prior at t = 0
  ParticleEnsemble final_ensemble;
};

/// Runs the particle filter along `obs`. Uses correlated_pf_step when the
/// model's noise is correlated. `observer` is called after every step
/// (step 0 = initial ensemble).
FilterRun run_particle_filter(const ObservationPath& obs, const FilteringProblem& problem, const GaussianPrior& prior,
                              const FilterConfig& config, std::span<const TestFunction> dictionary,
                              const FilterObserver& observer = {});

struct PosteriorEstimate {
  std::vector<double> estimate;  ///< one per test function
  std::vector<double> std_error;
  double ess = 0.0;
  bool low_ess = false;
};

/// Log-weight of one prior path from its sensor values h(X_{t_n}),
/// n = 0..steps, row-major (steps + 1) x channels.
using PathLogWeight = std::function<double(std::span<const double>)>;

/// Self-normalized estimate of E[f(X_T) exp(log_weight)] / E[exp(log_weight)]
/// over n_paths prior paths. Paths depend only on (seed, path index), so two
/// estimators with the same seed share their paths.
PosteriorEstimate path_posterior(const FilteringProblem& problem, const GaussianPrior& prior, std::size_t n_paths,
                                 std::size_t obs_steps, std::span<const TestFunction> functions, std::uint64_t seed,
                                 const PathLogWeight& log_weight);

/// Self-normalized Monte-Carlo evaluation of the Bayes ratio
/// E[f(X_T) | Y] = E[f(X_T) q_T] / E[q_T] over n_paths prior paths.
/// Requires independent signal and observation noise.
PosteriorEstimate ks_posterior(const ObservationPath& obs, const FilteringProblem& problem, const GaussianPrior& prior,
                               std::size_t n_paths, std::span<const TestFunction> functions, std::uint64_t seed);

/// Self-normalized estimate with delta-method standard errors from
/// log-weights and per-path function values (paths x functions).
PosteriorEstimate self_normalized_estimate(std::span<const double> log_weights, std::span<const double> values,
                                           std::size_t n_functions);

}  // namespace spinfilter
