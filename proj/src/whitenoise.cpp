#include "spinfilter/whitenoise.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spinfilter/errors.hpp"
#include "spinfilter/parallel.hpp"
#include "spinfilter/stats.hpp"

namespace spinfilter {

void WhiteNoiseRecord::validate() const {
  if (!(dt > 0.0)) throw ConfigError("record spacing must be positive");
  if (channels == 0) throw ConfigError("record needs at least one channel");
  if (values.size() % channels != 0) throw ConfigError("record length is not a multiple of the channel count");
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("record contains non-finite values");
  }
}

WhiteNoiseRecord white_noise_from_increments(const ObservationPath& obs) {
  WhiteNoiseRecord y;
  y.dt = obs.dt_obs;
  y.channels = obs.channels;
  y.values.resize(obs.increments.size());
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] = obs.increments[i] / obs.dt_obs;
  return y;
}

ObservationPath increments_from_white_noise(const WhiteNoiseRecord& y) {
  ObservationPath obs;
  obs.dt_obs = y.dt;
  obs.channels = y.channels;
  obs.increments.resize(y.values.size());
  for (std::size_t i = 0; i < y.values.size(); ++i) obs.increments[i] = y.values[i] * y.dt;
  return obs;
}

double wn_log_weight(const WhiteNoiseRecord& y, std::span<const double> zeta) {
  const std::size_t ch = y.channels;
  const std::size_t steps = y.steps();
  if (zeta.size() != (steps + 1) * ch) throw ConfigError("zeta must hold steps + 1 nodes");
  double inner = 0.0;
  double norm = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double a = zeta[n * ch + c];
      const double b = zeta[(n + 1) * ch + c];
      inner += y.values[n * ch + c] * 0.5 * (a + b);
      norm += 0.5 * (a * a + b * b);
    }
  }
  return y.dt * (inner - 0.5 * norm);
}

PosteriorEstimate wn_bayes(const WhiteNoiseRecord& y, const FilteringProblem& problem, const GaussianPrior& prior,
                           std::size_t n_mc, std::span<const TestFunction> functions, std::uint64_t seed) {
  y.validate();
  if (problem.model.noise.correlated()) throw ConfigError("the white-noise model needs an independent signal");
  if (y.channels != problem.sensor.channels()) throw ConfigError("record channels do not match the sensor");
  if (std::abs(y.dt - problem.dt_obs) > 1e-12 * y.dt) throw ConfigError("record spacing must equal dt_obs");
  auto weight = [&](std::span<const double> zeta) { return wn_log_weight(y, zeta); };
  return path_posterior(problem, prior, n_mc, y.steps(), functions, seed, weight);
}

void wn_measure_step(ParticleEnsemble& ens, const WhiteNoiseRecord& y, const FilteringProblem& problem,
                     const FilterConfig& config) {
  if (ens.obs_steps >= y.steps()) throw ConfigError("white-noise record exhausted");
  if (std::abs(y.dt - problem.dt_obs) > 1e-12 * y.dt) throw ConfigError("record spacing must equal dt_obs");
  const std::size_t n = ens.size();
  const std::size_t ch = problem.sensor.channels();
  if (y.channels != ch) throw ConfigError("record channels do not match the sensor");
  const auto yv = y.value(ens.obs_steps);

  // c at the interval start, then at the end after propagation.
  std::vector<double> c0(n);
  std::vector<double> y_dot(n);
  parallel_for_blocks(n, 64, [&](std::size_t begin, std::size_t end) {
    std::vector<double> h(ch);
    for (std::size_t i = begin; i < end; ++i) {
      problem.sensor.evaluate(ens.particle(i), h);
      double dot = 0.0;
      double sq = 0.0;
      for (std::size_t k = 0; k < ch; ++k) {
        dot += h[k] * yv[k];
        sq += h[k] * h[k];
      }
      c0[i] = dot - 0.5 * sq;
    }
  });
  auto ll = mutate_ensemble(ens, problem, config);
  parallel_for_blocks(n, 64, [&](std::size_t begin, std::size_t end) {
    std::vector<double> h(ch);
    for (std::size_t i = begin; i < end; ++i) {
      if (!std::isfinite(ll[i])) continue;
      problem.sensor.evaluate(ens.particle(i), h);
      double dot = 0.0;
      double sq = 0.0;
      for (std::size_t k = 0; k < ch; ++k) {
        dot += h[k] * yv[k];
        sq += h[k] * h[k];
      }
      ll[i] = 0.5 * y.dt * (c0[i] + dot - 0.5 * sq);
      if (std::isnan(ll[i])) ll[i] = -INFINITY;
    }
  });
  reweight_ensemble(ens, ll, y.dt, config);
}

void advance_wn_filter(ParticleEnsemble& ens, const WhiteNoiseRecord& y, std::size_t until,
                       const FilteringProblem& problem, const FilterConfig& config, const FilterObserver& observer) {
  until = std::min(until, y.steps());
  while (ens.obs_steps < until) {
    wn_measure_step(ens, y, problem, config);
    if (observer) observer(ens, ens.obs_steps);
  }
}

FilterRun run_wn_filter(const WhiteNoiseRecord& y, const FilteringProblem& problem, const GaussianPrior& prior,
                        const FilterConfig& config, std::span<const TestFunction> dictionary) {
  y.validate();
  if (problem.model.noise.correlated()) throw ConfigError("the white-noise model needs an independent signal");
  FilterRun run;
  run.final_ensemble = initialize_ensemble(prior, problem.model.site_count(), config);
  std::size_t last_resample = 0;
  auto record = [&](const ParticleEnsemble& ens, std::size_t) {
    FilterRecord r;
    r.t = ens.t;
    for (const auto& f : dictionary) r.moments.push_back(posterior_moment(ens, f));
    r.ess = ens.ess();
    r.log_mass = ens.log_mass;
    r.resampled = ens.resample_count != last_resample;
    last_resample = ens.resample_count;
    run.records.push_back(std::move(r));
  };
  record(run.final_ensemble, 0);
  advance_wn_filter(run.final_ensemble, y, y.steps(), problem, config, record);
  return run;
}

WhiteNoiseRecord perturbation_profile(const WhiteNoiseRecord& y) {
  WhiteNoiseRecord p;
  p.dt = y.dt;
  p.channels = y.channels;
  const std::size_t steps = y.steps();
  const double horizon = y.horizon();
  p.values.resize(y.values.size());
  for (std::size_t n = 0; n < steps; ++n) {
    const double t = (static_cast<double>(n) + 0.5) * y.dt;
    const double v = std::sqrt(2.0 / horizon) * std::sin(std::numbers::pi * t / horizon);
    for (std::size_t c = 0; c < y.channels; ++c) p.values[n * y.channels + c] = v;
  }
  return p;
}

RobustnessReport wn_robustness(const WhiteNoiseRecord& y, std::span<const double> eps, const FilteringProblem& problem,
                               const GaussianPrior& prior, const FilterConfig& config,
                               std::span<const TestFunction> dictionary, std::size_t replicas) {
  if (eps.empty()) throw ConfigError("perturbation list must not be empty");
  for (std::size_t k = 1; k < eps.size(); ++k) {
    if (!(eps[k] < eps[k - 1])) throw ConfigError("perturbation sizes must be strictly decreasing");
  }
  if (replicas < 2) throw ConfigError("replicas must be >= 2");
  y.validate();
  const auto profile = perturbation_profile(y);
  const std::size_t ne = eps.size();
  std::vector<double> dist(replicas * ne);
  parallel_for(replicas, [&](std::size_t r) {
    FilterConfig fc = config;
    fc.seed = CounterRng(config.seed).fork(r).seed();
    const auto base = run_wn_filter(y, problem, prior, fc, {});
    for (std::size_t k = 0; k < ne; ++k) {
      WhiteNoiseRecord yk = y;
      for (std::size_t i = 0; i < yk.values.size(); ++i) yk.values[i] += eps[k] * profile.values[i];
      const auto run = run_wn_filter(yk, problem, prior, fc, {});
      dist[r * ne + k] = ensemble_distance(run.final_ensemble, base.final_ensemble, dictionary);
    }
  });
  RobustnessReport rep;
  rep.replicas = replicas;
  rep.eps.assign(eps.begin(), eps.end());
  std::vector<double> col(replicas);
  for (std::size_t k = 0; k < ne; ++k) {
    for (std::size_t r = 0; r < replicas; ++r) col[r] = dist[r * ne + k];
    const auto e = mean_estimate(col);
    rep.distance.push_back(e.mean);
    rep.distance_se.push_back(e.std_error);
    if (eps[k] > 0.0) rep.modulus = std::max(rep.modulus, e.mean / eps[k]);
  }
  rep.monotone = true;
  for (std::size_t k = 1; k < ne; ++k) {
    const double slack = 2.0 * std::hypot(rep.distance_se[k], rep.distance_se[k - 1]);
    if (rep.distance[k] > rep.distance[k - 1] + slack) rep.monotone = false;
  }
  return rep;
}

}  // namespace spinfilter
