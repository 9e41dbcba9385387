#include "spinfilter/asymptotics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "spinfilter/errors.hpp"
#include "spinfilter/observation.hpp"
#include "spinfilter/parallel.hpp"
#include "spinfilter/stats.hpp"

namespace spinfilter {
namespace {

constexpr std::uint64_t kSemigroupTag = 0x5347;
constexpr std::uint64_t kChainTag = 0x4348;
constexpr std::uint64_t kTruthTag = 0x5452;

std::size_t steps_for(double t, double dt) {
  const double r = t / dt;
  const double k = std::round(r);
  if (std::abs(r - k) > 1e-9 * std::max(1.0, r)) throw ConfigError("time is not a multiple of dt");
  return static_cast<std::size_t>(k);
}

double weighted_mean(std::span<const double> w, std::span<const double> v, std::vector<double>& tmp) {
  tmp.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) tmp[i] = w[i] * v[i];
  return pairwise_sum(tmp);
}

double weighted_cov(std::span<const double> w, std::span<const double> u, double mu, std::span<const double> v,
                    double mv, std::vector<double>& tmp) {
  tmp.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) tmp[i] = w[i] * (u[i] - mu) * (v[i] - mv);
  return pairwise_sum(tmp);
}

}  // namespace

SemigroupEstimate estimate_semigroup(std::span<const double> x, const TestFunction& phi,
                                     std::span<const double> t_grid, std::size_t n_mc, const Model& model,
                                     const SimConfig& sim) {
  if (n_mc < 2) throw ConfigError("n_mc must be >= 2");
  if (x.size() != model.site_count()) throw ConfigError("starting point has the wrong length");
  SemigroupEstimate est;
  est.t.assign(t_grid.begin(), t_grid.end());
  est.x.assign(x.begin(), x.end());
  std::vector<std::size_t> marks;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    marks.push_back(steps_for(t_grid[k], sim.dt));
    if (k > 0 && marks[k] < marks[k - 1]) throw ConfigError("time grid must be non-decreasing");
  }
  const std::size_t nt = marks.size();
  const std::size_t dim = x.size();
  const SignalStepper stepper(model, sim.dt, sim.scheme);
  const CounterRng rng = CounterRng(sim.seed).fork(kSemigroupTag);
  std::vector<double> values(n_mc * nt);
  parallel_for_blocks(n_mc, 64, [&](std::size_t begin, std::size_t end) {
    std::vector<double> state(dim);
    std::vector<double> inc(dim);
    std::vector<double> scratch(2 * dim);
    for (std::size_t i = begin; i < end; ++i) {
      std::copy(x.begin(), x.end(), state.begin());
      std::size_t step = 0;
      for (std::size_t k = 0; k < nt; ++k) {
        for (; step < marks[k]; ++step) {
          stepper.noise_increment(rng, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(step), inc);
          stepper.advance(state, inc, scratch);
        }
        values[k * n_mc + i] = phi(state);
      }
    }
  });
  for (std::size_t k = 0; k < nt; ++k) {
    const auto e = mean_estimate(std::span<const double>(values).subspan(k * n_mc, n_mc));
    if (!std::isfinite(e.mean)) throw NumericError("semigroup estimate is not finite");
    est.values.push_back(e.mean);
    est.std_error.push_back(e.std_error);
  }
  return est;
}

double default_burn_in(const Model& model, double fallback) {
  const double omega = model.guaranteed_rate();
  return omega > 0.0 ? 5.0 / omega : fallback;
}

InvariantReport estimate_invariant_measure(const Model& model, const SimConfig& sim, const InvariantOptions& options,
                                           std::span<const CylindricalFunction> dictionary) {
  if (options.n_chains < 1) throw ConfigError("n_chains must be >= 1");
  if (options.batches < 2) throw ConfigError("batches must be >= 2");
  if (options.sample_every < 1) throw ConfigError("sample_every must be >= 1");
  const std::size_t dim = model.site_count();
  InvariantReport rep;
  rep.burn_in = options.burn_in >= 0.0 ? options.burn_in : default_burn_in(model, 0.1 * options.horizon);
  const auto burn = static_cast<std::size_t>(std::ceil(rep.burn_in / sim.dt - 1e-9));
  const auto run = static_cast<std::size_t>(std::llround(options.horizon / sim.dt));
  const std::size_t samples = run / options.sample_every;
  if (samples < options.batches) throw ConfigError("horizon too short for the requested batches");
  rep.samples_per_chain = samples;
  const std::size_t per_batch = samples / options.batches;

  // Observables: x_s, x_s^2, mean_s x_s^2, dictionary.
  const std::size_t nd = dictionary.size();
  const std::size_t nobs = 2 * dim + 1 + nd;
  const std::size_t nb = options.batches;
  const std::size_t nc = options.n_chains;
  std::vector<double> batch(nc * nb * nobs, 0.0);

  const SignalStepper stepper(model, sim.dt, sim.scheme);
  const CounterRng rng = CounterRng(sim.seed).fork(kChainTag);
  parallel_for(nc, [&](std::size_t c) {
    std::vector<double> x(dim);
    const double start = nc == 1 ? 0.0 : options.spread * (2.0 * static_cast<double>(c) / static_cast<double>(nc - 1) - 1.0);
    std::fill(x.begin(), x.end(), start);
    std::vector<double> inc(dim);
    std::vector<double> scratch(2 * dim);
    std::vector<double> acc(nobs, 0.0);
    double* out = batch.data() + c * nb * nobs;
    std::size_t taken = 0;
    const std::size_t total = burn + samples * options.sample_every;
    for (std::size_t step = 0; step < total; ++step) {
      stepper.noise_increment(rng, static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(step), inc);
      stepper.advance(x, inc, scratch);
      if (step + 1 <= burn || (step + 1 - burn) % options.sample_every != 0) continue;
      const std::size_t b = taken / per_batch;
      ++taken;
      if (b >= nb) continue;
      double sq = 0.0;
      for (std::size_t s = 0; s < dim; ++s) {
        acc[s] += x[s];
        acc[dim + s] += x[s] * x[s];
        sq += x[s] * x[s];
      }
      acc[2 * dim] += sq / static_cast<double>(dim);
      for (std::size_t k = 0; k < nd; ++k) acc[2 * dim + 1 + k] += dictionary[k](x);
      if (taken % per_batch == 0) {
        for (std::size_t o = 0; o < nobs; ++o) out[b * nobs + o] = acc[o] / static_cast<double>(per_batch);
        std::fill(acc.begin(), acc.end(), 0.0);
      }
    }
    for (double v : x) {
      if (!std::isfinite(v)) throw NumericError("chain " + std::to_string(c) + " diverged");
    }
  });

  std::vector<double> pooled(nobs);
  std::vector<double> pooled_se(nobs);
  std::vector<double> chain_mean(nc * nobs);
  double max_z = 0.0;
  std::vector<double> col(nc * nb);
  std::vector<double> ccol(nb);
  for (std::size_t o = 0; o < nobs; ++o) {
    for (std::size_t i = 0; i < nc * nb; ++i) col[i] = batch[i * nobs + o];
    const auto e = mean_estimate(col);
    pooled[o] = e.mean;
    pooled_se[o] = e.std_error;
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t b = 0; b < nb; ++b) ccol[b] = batch[(c * nb + b) * nobs + o];
      const auto ce = mean_estimate(ccol);
      chain_mean[c * nobs + o] = ce.mean;
      if (nc > 1) {
        const double diff = std::abs(ce.mean - e.mean);
        const double z = ce.std_error > 0.0 ? diff / ce.std_error : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        max_z = std::max(max_z, z);
      }
    }
  }
  for (std::size_t s = 0; s < dim; ++s) {
    rep.site_mean.push_back(pooled[s]);
    rep.site_mean_se.push_back(pooled_se[s]);
    rep.site_variance.push_back(pooled[dim + s] - pooled[s] * pooled[s]);
    rep.site_variance_se.push_back(pooled_se[dim + s]);
  }
  double mean_sq = 0.0;
  for (std::size_t s = 0; s < dim; ++s) mean_sq += pooled[s] * pooled[s];
  rep.pooled_variance = pooled[2 * dim] - mean_sq / static_cast<double>(dim);
  rep.pooled_variance_se = pooled_se[2 * dim];
  for (std::size_t k = 0; k < nd; ++k) {
    MomentEstimate m;
    m.name = dictionary[k].name();
    m.mean = pooled[2 * dim + 1 + k];
    m.std_error = pooled_se[2 * dim + 1 + k];
    for (std::size_t c = 0; c < nc; ++c) m.chain_means.push_back(chain_mean[c * nobs + 2 * dim + 1 + k]);
    rep.moments.push_back(std::move(m));
  }
  rep.max_chain_z = max_z;
  rep.converged = max_z <= 5.0;
  return rep;
}

RateFit fit_convergence_rate(std::span<const double> t, std::span<const double> gap,
                             std::span<const double> gap_se, double x_norm, double phi_lip) {
  if (t.size() != gap.size() || (!gap_se.empty() && gap_se.size() != gap.size())) {
    throw ConfigError("gap series lengths differ");
  }
  if (!(phi_lip > 0.0) || !std::isfinite(phi_lip)) throw ConfigError("test function needs a finite Lipschitz constant");
  auto se = [&](std::size_t i) { return gap_se.empty() ? 0.0 : gap_se[i]; };
  std::vector<double> ts;
  std::vector<double> ls;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(gap[i]) > 3.0 * se(i) && gap[i] != 0.0) {
      ts.push_back(t[i]);
      ls.push_back(std::log(std::abs(gap[i])));
    }
  }
  if (ts.size() < 4) throw ValidationError("fewer than 4 significant gap points; cannot fit a rate");
  const auto n = static_cast<double>(ts.size());
  double mt = 0.0;
  double ml = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mt += ts[i];
    ml += ls[i];
  }
  mt /= n;
  ml /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxx += (ts[i] - mt) * (ts[i] - mt);
    sxy += (ts[i] - mt) * (ls[i] - ml);
  }
  if (sxx == 0.0) throw ValidationError("significant gap points share one time");
  const double slope = sxy / sxx;
  const double icpt = ml - slope * mt;
  double rss = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double r = ls[i] - (icpt + slope * ts[i]);
    rss += r * r;
  }
  RateFit fit;
  fit.omega = -slope;
  fit.residual = std::sqrt(rss / n);
  fit.tolerance = std::expm1(3.0 * fit.residual);
  fit.c = std::max(0.0, std::exp(icpt) / phi_lip - 2.0 * x_norm);
  fit.t_min = ts.front();
  fit.t_max = ts.back();
  fit.points = ts.size();
  fit.envelope_ok = true;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double env = (fit.c + 2.0 * x_norm) * std::exp(-fit.omega * t[i]) * phi_lip;
    fit.envelope.push_back(env);
    const double bound = env * (1.0 + fit.tolerance) * (1.0 + 1e-9) + 3.0 * se(i);
    if (env > 0.0) fit.max_excess = std::max(fit.max_excess, std::abs(gap[i]) / env);
    if (std::abs(gap[i]) > bound) fit.envelope_ok = false;
  }
  return fit;
}

double generator_apply(const Model& model, const CylindricalFunction& f, std::span<const double> x,
                       std::span<double> scratch) {
  const auto& e = f.direction();
  const double u = f.projection(x);
  const double d1 = f.phi_prime(u);
  const double d2 = f.phi_second(u);
  double drift = 0.0;
  if (d1 != 0.0) {
    model.interaction.apply(x, scratch);
    for (std::size_t s = 0; s < e.size(); ++s) {
      if (e[s] != 0.0) drift += e[s] * (scratch[s] + model.drift(x[s]));
    }
  }
  double diff = 0.0;
  if (d2 != 0.0) {
    for (std::size_t s = 0; s < e.size(); ++s) diff += e[s] * e[s] * model.noise.diffusion(s);
  }
  return d1 * drift + 0.5 * d2 * diff;
}

double carre_du_champ(const Model& model, const CylindricalFunction& f, const CylindricalFunction& g,
                      std::span<const double> x) {
  const auto& ef = f.direction();
  const auto& eg = g.direction();
  double s = 0.0;
  for (std::size_t i = 0; i < ef.size(); ++i) s += ef[i] * eg[i] * model.noise.diffusion(i);
  return f.phi_prime(f.projection(x)) * g.phi_prime(g.projection(x)) * s;
}

BarycenterReport barycenter_check(const FilteringProblem& problem, std::span<const CylindricalFunction> dictionary,
                                  const BarycenterOptions& options) {
  if (problem.model.noise.correlated()) throw ConfigError("barycenter check needs independent noises");
  if (dictionary.empty()) throw ConfigError("dictionary must not be empty");
  BarycenterReport rep;
  rep.caveat =
      "the identity also needs a tail sigma-field condition on (X, Y) that cannot be checked numerically; "
      "the comparison is run regardless";
  rep.burn_in = options.burn_in >= 0.0 ? options.burn_in : default_burn_in(problem.model, 0.1 * options.horizon);

  const std::size_t dim = problem.model.site_count();
  SimConfig sim{problem.dt, options.horizon, problem.scheme, options.seed, problem.substeps()};
  std::vector<double> x0(dim);
  for (std::size_t s = 0; s < dim; ++s) x0[s] = options.prior.mean_at(s);
  const auto obs = simulate_observed(x0, problem.model, problem.sensor, sim, problem.dt_obs, 0);

  std::vector<TestFunction> fs;
  for (const auto& f : dictionary) fs.push_back(f.as_function());
  const auto run = run_particle_filter(obs.observations, problem, options.prior, options.filter, fs);

  std::vector<std::vector<double>> series(dictionary.size());
  for (const auto& r : run.records) {
    if (r.t < rep.burn_in) continue;
    for (std::size_t k = 0; k < fs.size(); ++k) series[k].push_back(r.moments[k]);
  }

  SimConfig chain_sim{problem.dt, 0.0, problem.scheme, options.seed ^ 0x9E3779B97F4A7C15ull, 1};
  const auto inv = estimate_invariant_measure(problem.model, chain_sim, options.invariant, dictionary);
  rep.invariant_converged = inv.converged;
  rep.ok = inv.converged;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    BarycenterEntry e;
    e.name = dictionary[k].name();
    const auto est = batch_mean_estimate(series[k], options.batches);
    e.filter_average = est.mean;
    e.filter_se = est.std_error;
    e.invariant_mean = inv.moments[k].mean;
    e.invariant_se = inv.moments[k].std_error;
    const double se = std::hypot(e.filter_se, e.invariant_se);
    e.z = se > 0.0 ? std::abs(e.filter_average - e.invariant_mean) / se : 0.0;
    e.ok = e.z < 3.0;
    rep.ok = rep.ok && e.ok;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

std::optional<double> linear_generator_rate(const Model& model, const CylindricalFunction& f) {
  if (f.shape() != Shape::identity) return std::nullopt;
  const auto& f0 = model.drift.f0();
  if (f0.degree() > 1) return std::nullopt;
  const double slope = (f0.degree() == 1 ? f0.coefficients()[1] : 0.0) + model.drift.f1_c();
  // A^T e + slope e must be a multiple of e.
  const auto& e = f.direction();
  const std::size_t n = e.size();
  std::vector<double> ae(n, 0.0);
  for (const auto& entry : model.interaction.entries()) ae[entry.col] += entry.value * e[entry.row];
  std::size_t pivot = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (e[i] != 0.0 && (pivot == n || std::abs(e[i]) > std::abs(e[pivot]))) pivot = i;
  }
  if (pivot == n) return std::nullopt;
  const double lambda = ae[pivot] / e[pivot];
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(ae[i]) + std::abs(lambda * e[i]));
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(ae[i] - lambda * e[i]) > 1e-12 * std::max(scale, 1.0)) return std::nullopt;
  }
  return lambda + slope;
}

CovarianceTrajectory error_covariance_evolution(const FilteringProblem& problem, const CylindricalFunction& f,
                                                const CylindricalFunction& g, const CovarianceOptions& options) {
  if (options.replicas < 2) throw ConfigError("replicas must be >= 2");
  const auto& model = problem.model;
  const std::size_t dim = model.site_count();
  if (f.direction().size() != dim || g.direction().size() != dim) {
    throw ConfigError("test function directions must match the lattice");
  }
  const std::size_t sub = problem.substeps();
  const std::size_t steps = steps_for(options.horizon, problem.dt_obs);
  const std::size_t nr = options.replicas;
  const std::size_t ch = problem.sensor.channels();
  const bool corr = model.noise.correlated();
  const auto rate_f = linear_generator_rate(model, f);
  const auto rate_g = linear_generator_rate(model, g);
  const double lambda = rate_f.value_or(0.0) + rate_g.value_or(0.0);

  // Per replica and step: direct product, posterior covariance, ODE rhs, carre du champ.
  const std::size_t nk = steps + 1;
  std::vector<double> direct(nr * nk);
  std::vector<double> pcov(nr * nk);
  std::vector<double> rhs(nr * nk);
  std::vector<double> q(nr * nk);

  const CounterRng truth_rng = CounterRng(options.seed).fork(kTruthTag);
  parallel_for(nr, [&](std::size_t r) {
    std::vector<double> x0(dim);
    options.prior.sample(truth_rng, static_cast<std::uint32_t>(r), x0);
    SimConfig sim{problem.dt, options.horizon, problem.scheme, options.seed, sub};
    const auto truth = simulate_observed(x0, model, problem.sensor, sim, problem.dt_obs, static_cast<std::uint32_t>(r));
    FilterConfig fc = options.filter;
    fc.seed = CounterRng(options.filter.seed).fork(r).seed();

    std::vector<double> w, fv, gv, af, ag, gam, hv, tmp, scratch(dim), hx(ch);
    auto observe = [&](const ParticleEnsemble& ens, std::size_t k) {
      const std::size_t n = ens.size();
      w = ens.normalized_weights();
      fv.resize(n);
      gv.resize(n);
      af.resize(n);
      ag.resize(n);
      gam.resize(n);
      hv.resize(n * ch);
      for (std::size_t i = 0; i < n; ++i) {
        const auto x = ens.particle(i);
        fv[i] = f(x);
        gv[i] = g(x);
        af[i] = generator_apply(model, f, x, scratch);
        ag[i] = generator_apply(model, g, x, scratch);
        gam[i] = carre_du_champ(model, f, g, x);
        problem.sensor.evaluate(x, hx);
        for (std::size_t c = 0; c < ch; ++c) hv[c * n + i] = hx[c];
      }
      const double mf = weighted_mean(w, fv, tmp);
      const double mg = weighted_mean(w, gv, tmp);
      const double maf = weighted_mean(w, af, tmp);
      const double mag = weighted_mean(w, ag, tmp);
      // Closed linear parts are carried by the ODE state itself.
      double value = (rate_g ? 0.0 : weighted_cov(w, fv, mf, ag, mag, tmp)) +
                     (rate_f ? 0.0 : weighted_cov(w, af, maf, gv, mg, tmp));
      const double qv = weighted_mean(w, gam, tmp);
      value += qv;
      for (std::size_t c = 0; c < ch; ++c) {
        const std::span<const double> hc(hv.data() + c * n, n);
        const double mh = weighted_mean(w, hc, tmp);
        double kf = weighted_cov(w, fv, mf, hc, mh, tmp);
        double kg = weighted_cov(w, gv, mg, hc, mh, tmp);
        if (corr) {
          // D~f = sigma2 b_c d f / d x_c, channel c paired with site c
          const double sb = model.noise.sigma2 * model.noise.b(c);
          std::vector<double> df(n), dg(n);
          for (std::size_t i = 0; i < n; ++i) {
            const auto x = ens.particle(i);
            df[i] = sb * f.direction()[c] * f.phi_prime(f.projection(x));
            dg[i] = sb * g.direction()[c] * g.phi_prime(g.projection(x));
          }
          kf += weighted_mean(w, df, tmp);
          kg += weighted_mean(w, dg, tmp);
        }
        value -= kf * kg;
      }
      rhs[r * nk + k] = value;
      q[r * nk + k] = qv;
      const auto xt = truth.signal.state(k);
      direct[r * nk + k] = (f(xt) - mf) * (g(xt) - mg);
      pcov[r * nk + k] = weighted_cov(w, fv, mf, gv, mg, tmp);
    };
    (void)run_particle_filter(truth.observations, problem, options.prior, fc, {}, observe);
  });

  CovarianceTrajectory tr;
  tr.replicas = nr;
  std::vector<double> ode_r(nr);
  std::vector<double> col(nr);
  const double h = problem.dt_obs;
  const double decay = std::exp(lambda * h);
  for (std::size_t k = 0; k < nk; ++k) {
    tr.t.push_back(static_cast<double>(k) * h);
    for (std::size_t r = 0; r < nr; ++r) col[r] = direct[r * nk + k];
    auto e = mean_estimate(col);
    tr.mc.push_back(e.mean);
    tr.mc_se.push_back(e.std_error);
    for (std::size_t r = 0; r < nr; ++r) {
      if (k == 0) {
        ode_r[r] = pcov[r * nk];
      } else {
        ode_r[r] = decay * ode_r[r] + 0.5 * h * (decay * rhs[r * nk + k - 1] + rhs[r * nk + k]);
      }
      if (!std::isfinite(ode_r[r])) throw NumericError("covariance ODE right-hand side is not finite");
    }
    e = mean_estimate(ode_r);
    tr.ode.push_back(e.mean);
    tr.ode_se.push_back(e.std_error);
    for (std::size_t r = 0; r < nr; ++r) col[r] = pcov[r * nk + k];
    e = mean_estimate(col);
    tr.posterior.push_back(e.mean);
    tr.posterior_se.push_back(e.std_error);
    for (std::size_t r = 0; r < nr; ++r) col[r] = q[r * nk + k];
    e = mean_estimate(col);
    tr.q.push_back(e.mean);
    tr.q_se.push_back(e.std_error);
    const double gap = std::abs(tr.mc[k] - tr.ode[k]);
    const double se = std::hypot(tr.mc_se[k], tr.ode_se[k]);
    tr.sup_gap = std::max(tr.sup_gap, gap);
    if (se > 0.0) tr.sup_gap_z = std::max(tr.sup_gap_z, gap / se);
  }
  return tr;
}

}  // namespace spinfilter
