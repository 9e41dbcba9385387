#include "spinfilter/observation.hpp"

#include <algorithm>
#include <cmath>

#include "spinfilter/errors.hpp"

namespace spinfilter {

SensorSpec SensorSpec::linear(std::vector<double> weights, std::size_t channels) {
  if (channels == 0) throw ConfigError("sensor needs at least one channel");
  if (weights.size() % channels != 0) throw ConfigError("linear sensor weights are not channels x sites");
  SensorSpec s;
  s.kind_ = SensorKind::linear;
  s.channels_ = channels;
  s.site_count_ = weights.size() / channels;
  s.weights_ = std::move(weights);
  return s;
}

SensorSpec SensorSpec::componentwise(Polynomial g, std::vector<std::size_t> sites) {
  if (sites.empty()) throw ConfigError("sensor needs at least one channel");
  SensorSpec s;
  s.kind_ = SensorKind::componentwise;
  s.channels_ = sites.size();
  s.g_ = std::move(g);
  s.sites_ = std::move(sites);
  s.growth_p_ = std::max(1, s.g_.degree());
  return s;
}

SensorSpec SensorSpec::identity(std::size_t sites) {
  std::vector<double> w(sites * sites, 0.0);
  for (std::size_t i = 0; i < sites; ++i) w[i * sites + i] = 1.0;
  return linear(std::move(w), sites);
}

SensorSpec SensorSpec::null(std::size_t channels, std::size_t sites) {
  return linear(std::vector<double>(channels * sites, 0.0), channels);
}

bool SensorSpec::is_zero() const {
  if (kind_ == SensorKind::linear) {
    return std::all_of(weights_.begin(), weights_.end(), [](double w) { return w == 0.0; });
  }
  return g_.is_zero();
}

void SensorSpec::evaluate(std::span<const double> x, std::span<double> out) const {
  if (kind_ == SensorKind::linear) {
    const std::size_t n = x.size();
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* row = weights_.data() + c * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += row[i] * x[i];
      out[c] = acc;
    }
  } else {
    for (std::size_t c = 0; c < channels_; ++c) out[c] = g_(x[sites_[c]]);
  }
}

std::vector<double> SensorSpec::operator()(std::span<const double> x) const {
  std::vector<double> out(channels_);
  evaluate(x, out);
  return out;
}

void SensorSpec::validate(std::size_t site_count) {
  if (kind_ == SensorKind::linear) {
    if (weights_.size() != channels_ * site_count) throw ConfigError("linear sensor weights do not match the lattice");
  } else {
    for (auto s : sites_) {
      if (s >= site_count) throw ConfigError("componentwise sensor observes a site outside the lattice");
    }
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw ConfigError("sensor weight is not finite");
  }
  site_count_ = site_count;
  growth_c_ = 0.0;
  std::vector<double> x(site_count);
  std::vector<double> h(channels_);
  auto probe = [&](double norm) {
    evaluate(x, h);
    double hn = 0.0;
    for (double v : h) hn += v * v;
    growth_c_ = std::max(growth_c_, std::sqrt(hn) / (1.0 + std::pow(norm, growth_p_)));
  };
  for (int k = -100; k <= 100; ++k) {
    const double t = 0.1 * k;
    for (std::size_t dir = 0; dir <= site_count; ++dir) {
      if (dir < site_count) {
        std::fill(x.begin(), x.end(), 0.0);
        x[dir] = t;
        probe(std::abs(t));
      } else {
        const double v = t / std::sqrt(static_cast<double>(site_count));
        std::fill(x.begin(), x.end(), v);
        probe(std::abs(t));
      }
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t substeps_per_observation(double dt, double dt_obs) {
  if (!(dt > 0.0) || !(dt_obs > 0.0)) throw ConfigError("dt and dt_obs must be positive");
  const double ratio = dt_obs / dt;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) {
    throw ConfigError("dt_obs must be an integer multiple of the dynamics dt");
  }
  return static_cast<std::size_t>(rounded);
}

ObservationPath generate_observations(const SignalPath& signal, const SensorSpec& sensor, const NoiseSpec& noise,
                                      double dt, double dt_obs, const CounterRng& rng, std::uint32_t index,
                                      bool noiseless) {
  const std::size_t sub = substeps_per_observation(dt, dt_obs);
  if (sub % signal.save_stride != 0) {
    throw ConfigError("signal save stride does not align with the observation step");
  }
  const std::size_t every = sub / signal.save_stride;
  if (signal.size() == 0) throw ConfigError("empty signal path");
  const std::size_t steps = (signal.size() - 1) / every;
  const std::size_t channels = sensor.channels();
  if (noise.correlated() && channels != signal.state_dim) {
    throw ConfigError("correlated noise (sigma2 != 0) requires one observation channel per site");
  }

  ObservationPath obs;
  obs.dt_obs = dt_obs;
  obs.channels = channels;
  obs.sigma1 = noise.sigma1;
  obs.sigma2 = noise.sigma2;
  obs.increments.resize(steps * channels);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> h(channels);
  for (std::size_t n = 0; n < steps; ++n) {
    sensor.evaluate(signal.state(n * every), h);
    for (std::size_t c = 0; c < channels; ++c) {
      double dz = 0.0;
      if (!noiseless) {
        for (std::size_t j = 0; j < sub; ++j) {
          dz += sequence_normal(rng, Stream::observation, index, static_cast<std::uint32_t>(c),
                                static_cast<std::uint32_t>(n * sub + j));
        }
        dz *= sqrt_dt;
      }
      const double v = h[c] * dt_obs + dz;
      if (!std::isfinite(v)) throw NumericError("non-finite observation increment at step " + std::to_string(n));
      obs.increments[n * channels + c] = v;
    }
  }
  return obs;
}

ObservedSignal simulate_observed(std::span<const double> x0, const Model& model, const SensorSpec& sensor,
                                 const SimConfig& config, double dt_obs, std::uint32_t index) {
  ObservedSignal out;
  out.signal = simulate_signal(x0, model, config, index);
  out.observations =
      generate_observations(out.signal, sensor, model.noise, config.dt, dt_obs, CounterRng(config.seed), index);
  return out;
}

ObservationPath aggregate(const ObservationPath& obs, std::size_t factor) {
  if (factor < 1 || obs.steps() % factor != 0) throw ConfigError("aggregation factor must divide the step count");
  ObservationPath out = obs;
  out.dt_obs = obs.dt_obs * static_cast<double>(factor);
  const std::size_t steps = obs.steps() / factor;
  out.increments.assign(steps * obs.channels, 0.0);
  for (std::size_t n = 0; n < steps; ++n) {
    for (std::size_t j = 0; j < factor; ++j) {
      for (std::size_t c = 0; c < obs.channels; ++c) {
        out.increments[n * obs.channels + c] += obs.increments[(n * factor + j) * obs.channels + c];
      }
    }
  }
  return out;
}

double log_likelihood_from_h(std::span<const double> h, std::span<const double> dy, double dt_obs) {
  double dot = 0.0;
  double sq = 0.0;
  for (std::size_t c = 0; c < h.size(); ++c) {
    dot += h[c] * dy[c];
    sq += h[c] * h[c];
  }
  return dot - 0.5 * sq * dt_obs;
}

double log_likelihood_increment(std::span<const double> x, std::span<const double> dy, double dt_obs,
                                const SensorSpec& sensor) {
  if (dy.size() != sensor.channels()) throw ConfigError("observation increment has the wrong channel count");
  const auto h = sensor(x);
  return log_likelihood_from_h(h, dy, dt_obs);
}

InnovationReport innovation_path(const ObservationPath& obs, std::span<const double> h_estimates) {
  const std::size_t steps = obs.steps();
  const std::size_t ch = obs.channels;
  if (h_estimates.size() != steps * ch) throw ConfigError("one filter estimate per observation step is required");
  InnovationReport rep;
  rep.steps = steps;
  rep.increments.resize(steps * ch);
  for (std::size_t i = 0; i < steps * ch; ++i) rep.increments[i] = obs.increments[i] - h_estimates[i] * obs.dt_obs;
  rep.quadratic_variation.assign(ch, 0.0);
  rep.mean_rate.assign(ch, 0.0);
  rep.lag1_autocorrelation.assign(ch, 0.0);
  const double sq = std::sqrt(obs.dt_obs);
  for (std::size_t c = 0; c < ch; ++c) {
    double qv = 0.0;
    double sum = 0.0;
    std::vector<double> z(steps);
    for (std::size_t n = 0; n < steps; ++n) {
      const double d = rep.increments[n * ch + c];
      qv += d * d;
      sum += d;
      z[n] = d / sq;
    }
    rep.quadratic_variation[c] = qv;
    if (steps > 0) rep.mean_rate[c] = sum / (static_cast<double>(steps) * obs.dt_obs);
    if (steps > 1) {
      double mean = 0.0;
      for (double v : z) mean += v;
      mean /= static_cast<double>(steps);
      double num = 0.0;
      double den = 0.0;
      for (std::size_t n = 0; n < steps; ++n) {
        den += (z[n] - mean) * (z[n] - mean);
        if (n + 1 < steps) num += (z[n] - mean) * (z[n + 1] - mean);
      }
      rep.lag1_autocorrelation[c] = den > 0.0 ? num / den : 0.0;
    }
  }
  return rep;
}

}  // namespace spinfilter
