#include "spinfilter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "spinfilter/errors.hpp"
#include "spinfilter/parallel.hpp"
#include "spinfilter/stats.hpp"

namespace spinfilter {
namespace {

constexpr std::uint64_t kFilterTag = 0x46494C54;  // particle filter draws
constexpr std::uint64_t kKsTag = 0x4B53;          // prior paths for the Bayes ratio
constexpr std::size_t kBlock = 64;

// Mutation over one observation interval. With `dy` non-empty the
// likelihood at the entering state is written to `ll`; with `inject` the
// sigma2 part of the signal noise comes from the observed innovation.
void mutate(ParticleEnsemble& ens, std::span<const double> dy, const FilteringProblem& problem,
            const FilterConfig& config, bool inject, std::vector<double>& ll) {
  const std::size_t n = ens.size();
  const std::size_t dim = ens.dim;
  const auto& model = problem.model;
  const auto& noise = model.noise;
  const std::size_t ch = problem.sensor.channels();
  const bool weigh = !dy.empty();
  if (weigh && dy.size() != ch) throw ConfigError("observation increment has the wrong channel count");
  const bool shared = weigh && inject && noise.sigma2 != 0.0;
  if (shared && ch != dim) throw ConfigError("correlated noise needs one channel per site");

  const std::size_t sub = problem.substeps();
  const double frac = problem.dt / problem.dt_obs;
  const SignalStepper stepper(model, problem.dt, problem.scheme);
  const CounterRng rng = CounterRng(config.seed).fork(kFilterTag);
  const auto base = static_cast<std::uint32_t>(ens.obs_steps * sub);

  ll.assign(n, 0.0);
  std::vector<char> bad(n, 0);
  parallel_for_blocks(n, kBlock, [&](std::size_t begin, std::size_t end) {
    std::vector<double> h(ch);
    std::vector<double> inj(shared ? dim : 0);
    std::vector<double> inc(dim);
    std::vector<double> scratch(2 * dim);
    for (std::size_t i = begin; i < end; ++i) {
      auto x = ens.particle(i);
      if (weigh) {
        problem.sensor.evaluate(x, h);
        ll[i] = log_likelihood_from_h(h, dy, problem.dt_obs);
        if (std::isnan(ll[i])) bad[i] = 1;
      }
      if (shared) {
        for (std::size_t s = 0; s < dim; ++s) {
          inj[s] = noise.b(s) * noise.sigma2 * (dy[s] - h[s] * problem.dt_obs) * frac;
        }
      }
      const auto idx = static_cast<std::uint32_t>(i);
      for (std::size_t j = 0; j < sub; ++j) {
        stepper.noise_increment(rng, idx, base + static_cast<std::uint32_t>(j), inc, !shared);
        if (shared) {
          for (std::size_t s = 0; s < dim; ++s) inc[s] += inj[s];
        }
        stepper.advance(x, inc, scratch);
      }
      for (double v : x) {
        if (!std::isfinite(v)) {
          bad[i] = 1;
          break;
        }
      }
    }
  });

  // A particle that blew up carries no weight.
  for (std::size_t i = 0; i < n; ++i) {
    if (bad[i]) {
      ll[i] = -std::numeric_limits<double>::infinity();
      auto x = ens.particle(i);
      std::fill(x.begin(), x.end(), 0.0);
    }
  }
}

}  // namespace

std::vector<double> mutate_ensemble(ParticleEnsemble& ens, const FilteringProblem& problem,
                                    const FilterConfig& config) {
  std::vector<double> ll;
  mutate(ens, {}, problem, config, false, ll);
  return ll;
}

void reweight_ensemble(ParticleEnsemble& ens, std::span<const double> ll, double dt_obs, const FilterConfig& config) {
  const std::size_t n = ens.size();
  if (ll.size() != n) throw ConfigError("one log-likelihood per particle is required");
  bool uniform = true;
  for (std::size_t i = 1; i < n && uniform; ++i) uniform = ll[i] == ll[0];
  if (uniform) {
    if (!std::isfinite(ll[0])) {
      throw FilterDivergence("all particle weights vanished at observation step " + std::to_string(ens.obs_steps));
    }
    ens.log_mass += ll[0];
  } else {
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = ens.log_weights[i] + ll[i];
    const double lse = log_sum_exp(a);
    if (!std::isfinite(lse)) {
      throw FilterDivergence("particle weights degenerate at observation step " + std::to_string(ens.obs_steps));
    }
    ens.log_mass += lse;
    for (std::size_t i = 0; i < n; ++i) ens.log_weights[i] = a[i] - lse;
  }
  ens.obs_steps += 1;
  ens.t = static_cast<double>(ens.obs_steps) * dt_obs;

  if (ens.ess() < config.resample_threshold * static_cast<double>(n)) resample(ens, config);
}


void FilterConfig::validate() const {
  if (n_particles < 1) throw ConfigError("n_particles must be >= 1");
  if (!(resample_threshold > 0.0 && resample_threshold <= 1.0)) {
    throw ConfigError("resample_threshold must lie in (0, 1]");
  }
}

void FilteringProblem::validate() {
  const std::size_t n = model.site_count();
  if (model.interaction.size() != n) throw ConfigError("interaction size does not match lattice");
  model.noise.validate(n, sensor.channels());
  sensor.validate(n);
  (void)substeps();
  if (scheme == Scheme::split_step && dt * model.drift.eta() >= 1.0) {
    std::ostringstream msg;
    msg << "dt * eta = " << dt * model.drift.eta() << " >= 1";
    throw ConfigError(msg.str());
  }
}

void GaussianPrior::sample(const CounterRng& rng, std::uint32_t index, std::span<double> out) const {
  if (mean.size() != 1 && mean.size() != out.size()) throw ConfigError("prior mean has the wrong length");
  if (std.size() != 1 && std.size() != out.size()) throw ConfigError("prior std has the wrong length");
  for (std::size_t s = 0; s < out.size(); ++s) {
    const double sd = std_at(s);
    if (sd < 0.0) throw ConfigError("prior std must be >= 0");
    out[s] = mean_at(s) + (sd == 0.0 ? 0.0 : sd * rng.normal(Stream::prior, index, static_cast<std::uint32_t>(s), 0));
  }
}

std::vector<double> ParticleEnsemble::normalized_weights() const {
  std::vector<double> w(log_weights.size());
  const double lse = log_sum_exp(log_weights);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - lse);
  return w;
}

double ParticleEnsemble::ess() const {
  const auto w = normalized_weights();
  std::vector<double> sq(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) sq[i] = w[i] * w[i];
  const double s = pairwise_sum(sq);
  return s > 0.0 ? 1.0 / s : 0.0;
}

ParticleEnsemble initialize_ensemble(const GaussianPrior& prior, std::size_t dim, const FilterConfig& config) {
  config.validate();
  ParticleEnsemble ens;
  ens.dim = dim;
  const std::size_t n = config.n_particles;
  ens.particles.resize(n * dim);
  ens.log_weights.assign(n, -std::log(static_cast<double>(n)));
  const CounterRng rng = CounterRng(config.seed).fork(kFilterTag);
  parallel_for_blocks(n, kBlock, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) prior.sample(rng, static_cast<std::uint32_t>(i), ens.particle(i));
  });
  return ens;
}

void pf_step(ParticleEnsemble& ens, std::span<const double> dy, const FilteringProblem& problem,
             const FilterConfig& config) {
  std::vector<double> ll;
  mutate(ens, dy, problem, config, false, ll);
  reweight_ensemble(ens, ll, problem.dt_obs, config);
}

void correlated_pf_step(ParticleEnsemble& ens, std::span<const double> dy, const FilteringProblem& problem,
                        const FilterConfig& config) {
  std::vector<double> ll;
  mutate(ens, dy, problem, config, true, ll);
  reweight_ensemble(ens, ll, problem.dt_obs, config);
}

double posterior_moment(const ParticleEnsemble& ens, const TestFunction& f) {
  const std::size_t n = ens.size();
  const auto w = ens.normalized_weights();
  std::vector<double> v(n);
  parallel_for_blocks(n, kBlock, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) v[i] = w[i] == 0.0 ? 0.0 : w[i] * f(ens.particle(i));
  });
  return pairwise_sum(v);
}

double zakai_moment(const ParticleEnsemble& ens, const TestFunction& f) {
  return std::exp(ens.log_mass) * posterior_moment(ens, f);
}

double ensemble_distance(const ParticleEnsemble& a, const ParticleEnsemble& b,
                         std::span<const TestFunction> dictionary) {
  double d = 0.0;
  for (const auto& f : dictionary) d = std::max(d, std::abs(posterior_moment(a, f) - posterior_moment(b, f)));
  return d;
}

std::vector<std::size_t> systematic_resample(std::span<const double> weights, double u) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> idx(n);
  if (n == 0) return idx;
  const double total = pairwise_sum(weights);
  double cum = weights[0] / total;
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = (static_cast<double>(k) + u) / static_cast<double>(n);
    while (pos > cum && j + 1 < n) {
      ++j;
      cum += weights[j] / total;
    }
    idx[k] = j;
  }
  return idx;
}

std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::span<const double> uniforms) {
  const std::size_t n = weights.size();
  std::vector<double> cdf(n);
  const double total = pairwise_sum(weights);
  double cum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum += weights[i] / total;
    cdf[i] = cum;
  }
  std::vector<std::size_t> idx(uniforms.size());
  for (std::size_t k = 0; k < uniforms.size(); ++k) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), uniforms[k]);
    idx[k] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), n - 1);
  }
  return idx;
}

void resample(ParticleEnsemble& ens, const FilterConfig& config) {
  const std::size_t n = ens.size();
  if (n == 0) return;
  const auto w = ens.normalized_weights();
  const CounterRng rng = CounterRng(config.seed).fork(kFilterTag);
  const auto step = static_cast<std::uint32_t>(ens.obs_steps);
  std::vector<std::size_t> idx;
  if (config.resampling == Resampling::systematic) {
    idx = systematic_resample(w, rng.uniform(Stream::resample, 0, 0, step));
  } else {
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = rng.uniform(Stream::resample, static_cast<std::uint32_t>(i), 1, step);
    idx = multinomial_resample(w, u);
  }
  std::vector<double> next(ens.particles.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = ens.particle(idx[i]);
    std::copy(src.begin(), src.end(), next.begin() + static_cast<std::ptrdiff_t>(i * ens.dim));
  }
  ens.particles.swap(next);
  std::fill(ens.log_weights.begin(), ens.log_weights.end(), -std::log(static_cast<double>(n)));
  ens.resample_count += 1;
}

FilterRun run_particle_filter(const ObservationPath& obs, const FilteringProblem& problem, const GaussianPrior& prior,
                              const FilterConfig& config, std::span<const TestFunction> dictionary,
                              const FilterObserver& observer) {
  config.validate();
  if (obs.channels != problem.sensor.channels()) throw ConfigError("observation channels do not match the sensor");
  if (std::abs(obs.dt_obs - problem.dt_obs) > 1e-12 * problem.dt_obs) {
    throw ConfigError("observation spacing does not match the filtering problem");
  }
  const bool correlated = problem.model.noise.correlated();
  FilterRun run;
  run.final_ensemble = initialize_ensemble(prior, problem.model.site_count(), config);
  auto& ens = run.final_ensemble;

  auto record = [&](bool resampled) {
    FilterRecord r;
    r.t = ens.t;
    r.moments.reserve(dictionary.size());
    for (const auto& f : dictionary) r.moments.push_back(posterior_moment(ens, f));
    r.ess = ens.ess();
    r.log_mass = ens.log_mass;
    r.resampled = resampled;
    run.records.push_back(std::move(r));
  };
  record(false);
  if (observer) observer(ens, 0);
  for (std::size_t n = 0; n < obs.steps(); ++n) {
    const std::size_t before = ens.resample_count;
    if (correlated) {
      correlated_pf_step(ens, obs.increment(n), problem, config);
    } else {
      pf_step(ens, obs.increment(n), problem, config);
    }
    record(ens.resample_count != before);
    if (observer) observer(ens, n + 1);
  }
  return run;
}

PosteriorEstimate self_normalized_estimate(std::span<const double> log_weights, std::span<const double> values,
                                           std::size_t n_functions) {
  const std::size_t n = log_weights.size();
  if (values.size() != n * n_functions) throw ConfigError("values must be paths x functions");
  PosteriorEstimate est;
  est.estimate.assign(n_functions, 0.0);
  est.std_error.assign(n_functions, 0.0);
  if (n == 0) return est;
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) m = std::max(m, v);
  if (!std::isfinite(m)) throw FilterDivergence("all path weights vanished");
  std::vector<double> w(n);
  std::vector<double> w2(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(log_weights[i] - m);
    w2[i] = w[i] * w[i];
  }
  const double s = pairwise_sum(w);
  const double s2 = pairwise_sum(w2);
  est.ess = s * s / s2;
  est.low_ess = est.ess < 10.0;
  std::vector<double> tmp(n);
  for (std::size_t k = 0; k < n_functions; ++k) {
    for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * values[i * n_functions + k];
    const double mean = pairwise_sum(tmp) / s;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = values[i * n_functions + k] - mean;
      tmp[i] = w2[i] * d * d;
    }
    est.estimate[k] = mean;
    est.std_error[k] = std::sqrt(pairwise_sum(tmp)) / s;
  }
  return est;
}

PosteriorEstimate path_posterior(const FilteringProblem& problem, const GaussianPrior& prior, std::size_t n_paths,
                                 std::size_t obs_steps, std::span<const TestFunction> functions, std::uint64_t seed,
                                 const PathLogWeight& log_weight) {
  if (n_paths < 2) throw ConfigError("n_paths must be >= 2");
  const std::size_t dim = problem.model.site_count();
  const std::size_t ch = problem.sensor.channels();
  const std::size_t sub = problem.substeps();
  const std::size_t nf = functions.size();
  const SignalStepper stepper(problem.model, problem.dt, problem.scheme);
  const CounterRng rng = CounterRng(seed).fork(kKsTag);

  std::vector<double> logw(n_paths, 0.0);
  std::vector<double> values(n_paths * nf, 0.0);
  parallel_for_blocks(n_paths, kBlock, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(dim);
    std::vector<double> h((obs_steps + 1) * ch);
    std::vector<double> inc(dim);
    std::vector<double> scratch(2 * dim);
    for (std::size_t i = begin; i < end; ++i) {
      const auto idx = static_cast<std::uint32_t>(i);
      prior.sample(rng, idx, x);
      bool finite = true;
      for (std::size_t n = 0; n <= obs_steps; ++n) {
        if (n > 0) {
          for (std::size_t j = 0; j < sub; ++j) {
            stepper.noise_increment(rng, idx, static_cast<std::uint32_t>((n - 1) * sub + j), inc);
            stepper.advance(x, inc, scratch);
          }
        }
        problem.sensor.evaluate(x, std::span<double>(h).subspan(n * ch, ch));
      }
      for (double v : x) finite = finite && std::isfinite(v);
      const double lw = finite ? log_weight(h) : 0.0;
      finite = finite && std::isfinite(lw);
      logw[i] = finite ? lw : -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < nf; ++k) values[i * nf + k] = finite ? functions[k](x) : 0.0;
    }
  });
  return self_normalized_estimate(logw, values, nf);
}

PosteriorEstimate ks_posterior(const ObservationPath& obs, const FilteringProblem& problem, const GaussianPrior& prior,
                               std::size_t n_paths, std::span<const TestFunction> functions, std::uint64_t seed) {
  if (problem.model.noise.correlated()) {
    throw ConfigError("the Bayes-ratio reference needs independent signal and observation noise");
  }
  if (obs.channels != problem.sensor.channels()) throw ConfigError("observation channels do not match the sensor");
  const std::size_t ch = obs.channels;
  const std::size_t steps = obs.steps();
  auto weight = [&](std::span<const double> h) {
    double lw = 0.0;
    for (std::size_t n = 0; n < steps; ++n) lw += log_likelihood_from_h(h.subspan(n * ch, ch), obs.increment(n), obs.dt_obs);
    return lw;
  };
  return path_posterior(problem, prior, n_paths, steps, functions, seed, weight);
}

}  // namespace spinfilter
