#include "spinfilter/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "spinfilter/errors.hpp"
#include "spinfilter/parallel.hpp"
#include "spinfilter/stats.hpp"

namespace spinfilter {

std::size_t SimConfig::step_count() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be >= 0");
  const double ratio = horizon / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("horizon is not an integer multiple of dt");
  }
  return static_cast<std::size_t>(rounded);
}

void SimConfig::validate() const {
  if (horizon > 0.0 && dt > horizon) throw ConfigError("dt must not exceed the horizon");
  if (save_stride < 1) throw ConfigError("save_stride must be >= 1");
  (void)step_count();
}

// ---------------------------------------------------------------------------

LinearPropagator::LinearPropagator(const InteractionOperator& a, double tau) : a_(&a), tau_(tau) {
  const auto entries = a.entries();
  if (entries.empty() || tau == 0.0) {
    identity_ = true;
    return;
  }
  if (a.is_diagonal()) {
    diagonal_ = true;
    diag_factor_.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diag_factor_[i] = std::exp(tau * a.diagonal(i));
    return;
  }
  const double norm = a.max_abs_row_sum() * std::abs(tau);
  substeps_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(norm / 0.5)));
}

void LinearPropagator::apply(std::span<double> x, std::span<double> scratch) const {
  if (identity_) return;
  if (diagonal_) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= diag_factor_[i];
    return;
  }
  const std::size_t n = x.size();
  auto term = scratch.first(n);
  auto next = scratch.subspan(n, n);
  const double h = tau_ / static_cast<double>(substeps_);
  for (std::size_t sub = 0; sub < substeps_; ++sub) {
    std::copy(x.begin(), x.end(), term.begin());
    double scale = 0.0;
    for (double v : x) scale = std::max(scale, std::abs(v));
    for (int k = 1; k <= 40; ++k) {
      a_->apply(term, next);
      const double c = h / k;
      double tmax = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        term[i] = c * next[i];
        x[i] += term[i];
        tmax = std::max(tmax, std::abs(term[i]));
      }
      if (tmax <= 1e-17 * std::max(scale, 1e-300)) break;
    }
  }
}

double solve_implicit(const Polynomial& f0, double dt, double v) {
  if (f0.is_zero()) return v;
  auto g = [&](double u) { return u - dt * f0(u) - v; };
  const double g0 = g(v);
  if (g0 == 0.0) return v;
  double lo = v;
  double hi = v;
  double width = 1e-3 * (1.0 + std::abs(v));
  bool bracketed = false;
  for (int i = 0; i < 100; ++i) {
    if (g0 > 0.0) {
      lo = v - width;
      if (g(lo) <= 0.0) {
        bracketed = true;
        break;
      }
      hi = lo;
    } else {
      hi = v + width;
      if (g(hi) >= 0.0) {
        bracketed = true;
        break;
      }
      lo = hi;
    }
    width *= 2.0;
  }
  if (!bracketed) throw NumericError("implicit drift solve failed to bracket a root; reduce dt");

  double u = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double gu = g(u);
    if (gu == 0.0) return u;
    if (gu < 0.0) {
      lo = u;
    } else {
      hi = u;
    }
    const double slope = 1.0 - dt * f0.derivative(u);
    double next = slope > 0.0 ? u - gu / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - u) <= 4e-16 * std::max(1.0, std::abs(u)) || hi - lo <= 4e-16 * std::max(1.0, std::abs(u))) {
      return next;
    }
    u = next;
  }
  throw NumericError("implicit drift solve did not converge; reduce dt");
}

// ---------------------------------------------------------------------------

SignalStepper::SignalStepper(const Model& model, double dt, Scheme scheme)
    : model_(&model), dt_(dt), scheme_(scheme), propagator_(model.interaction, dt), sqrt_dt_(std::sqrt(dt)) {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (model.interaction.size() != model.site_count()) throw ConfigError("interaction size does not match lattice");
  model.noise.validate(model.site_count());
  if (scheme == Scheme::split_step && dt * model.drift.eta() >= 1.0) {
    std::ostringstream msg;
    msg << "dt * eta = " << dt * model.drift.eta() << " >= 1: implicit drift step is not monotone";
    throw ConfigError(msg.str());
  }
}

void SignalStepper::deterministic(std::span<double> x, std::span<double> scratch) const {
  propagator_.apply(x, scratch);
  const auto& drift = model_->drift;
  if (drift.is_zero()) return;
  const auto& f0 = drift.f0();
  const double c = drift.f1_c();
  if (scheme_ == Scheme::split_step) {
    for (auto& v : x) {
      const double f1 = dt_ * c * v;
      v = solve_implicit(f0, dt_, v) + f1;
    }
  } else {
    for (auto& v : x) {
      const double f = f0(v);
      v = v + dt_ * f / (1.0 + dt_ * std::abs(f)) + dt_ * c * v;
    }
  }
}

void SignalStepper::advance(std::span<double> x, std::span<const double> increment,
                            std::span<double> scratch) const {
  deterministic(x, scratch);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += increment[i];
}

void SignalStepper::noise_increment(const CounterRng& rng, std::uint32_t index, std::uint32_t step,
                                    std::span<double> out, bool include_shared) const {
  const auto& noise = model_->noise;
  for (std::size_t s = 0; s < out.size(); ++s) {
    const auto site = static_cast<std::uint32_t>(s);
    const double b = noise.b(s);
    if (b == 0.0) {
      out[s] = 0.0;
      continue;
    }
    double w = noise.sigma1 * sequence_normal(rng, Stream::signal, index, site, step);
    if (include_shared && noise.sigma2 != 0.0) w += noise.sigma2 * sequence_normal(rng, Stream::observation, index, site, step);
    out[s] = b * sqrt_dt_ * w;
  }
}

std::vector<double> step_signal(std::span<const double> x, const Model& model, double dt, Scheme scheme,
                                const CounterRng& rng, std::uint32_t index, std::uint32_t step) {
  if (x.size() != model.site_count()) throw ConfigError("state length does not match lattice");
  SignalStepper stepper(model, dt, scheme);
  std::vector<double> out(x.begin(), x.end());
  std::vector<double> inc(x.size());
  std::vector<double> scratch(2 * x.size());
  stepper.noise_increment(rng, index, step, inc);
  stepper.advance(out, inc, scratch);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw StepError("non-finite state at site " + std::to_string(i), step);
  }
  return out;
}

SignalPath simulate_signal(std::span<const double> x0, const Model& model, const SimConfig& config,
                           std::uint32_t index) {
  config.validate();
  const std::size_t n = model.site_count();
  if (x0.size() != n) throw ConfigError("initial state length does not match lattice");
  const std::size_t steps = config.step_count();
  SignalStepper stepper(model, config.dt, config.scheme);
  const CounterRng rng(config.seed);

  SignalPath path;
  path.state_dim = n;
  path.save_stride = config.save_stride;
  path.times.push_back(0.0);
  path.states.assign(x0.begin(), x0.end());

  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> inc(n);
  std::vector<double> scratch(2 * n);
  for (std::size_t k = 0; k < steps; ++k) {
    try {
      stepper.noise_increment(rng, index, static_cast<std::uint32_t>(k), inc);
      stepper.advance(x, inc, scratch);
    } catch (const NumericError& e) {
      throw StepError(std::string(e.what()) + " (step " + std::to_string(k) + ")", k);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(x[i])) {
        throw StepError("non-finite state at site " + std::to_string(i) + " (step " + std::to_string(k) + ")", k);
      }
    }
    if ((k + 1) % config.save_stride == 0) {
      path.times.push_back(static_cast<double>(k + 1) * config.dt);
      path.states.insert(path.states.end(), x.begin(), x.end());
    }
  }
  return path;
}

// ---------------------------------------------------------------------------
// Torus

namespace {

double eval_trig(const LatticeSpec& lattice, std::span<const double> angles, std::size_t site,
                 double constant, const std::vector<TrigTerm>& terms) {
  double acc = constant;
  for (const auto& t : terms) {
    double nb = 0.0;
    if (t.neighbor_freq != 0) {
      const auto j = lattice.shifted(site, t.offset);
      if (!j) continue;
      nb = angles[*j];
    }
    acc += t.amplitude * std::cos(t.self_freq * angles[site] + t.neighbor_freq * nb + t.phase);
  }
  return acc;
}

double term_range(const std::vector<TrigTerm>& terms) {
  double r = 0.0;
  for (const auto& t : terms) {
    if (t.neighbor_freq == 0) continue;
    double sq = 0.0;
    for (int o : t.offset) sq += static_cast<double>(o) * o;
    r = std::max(r, std::sqrt(sq));
  }
  return r;
}

double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a, two_pi);
  if (w < 0.0) w += two_pi;
  return w;
}

}  // namespace

double TorusModel::interaction_range() const {
  return std::max(term_range(drift_terms), term_range(diffusion_terms));
}

double TorusModel::drift(std::span<const double> angles, std::size_t site) const {
  return eval_trig(lattice, angles, site, drift_constant, drift_terms);
}

double TorusModel::diffusion(std::span<const double> angles, std::size_t site) const {
  return eval_trig(lattice, angles, site, diffusion_constant, diffusion_terms);
}

SignalPath simulate_torus(std::span<const double> eta0, const TorusModel& model, const SimConfig& config,
                          SignalPath* lifted) {
  config.validate();
  const std::size_t n = model.lattice.site_count();
  if (eta0.size() != n) throw ConfigError("initial angles length does not match lattice");
  for (const auto& t : model.drift_terms) {
    if (t.offset.size() != static_cast<std::size_t>(model.lattice.dim())) throw ConfigError("trig term offset rank");
  }
  for (const auto& t : model.diffusion_terms) {
    if (t.offset.size() != static_cast<std::size_t>(model.lattice.dim())) throw ConfigError("trig term offset rank");
  }
  const std::size_t steps = config.step_count();
  const CounterRng rng(config.seed);
  const double sqrt_dt = std::sqrt(config.dt);

  SignalPath wrapped;
  wrapped.state_dim = n;
  wrapped.save_stride = config.save_stride;
  SignalPath raw = wrapped;

  std::vector<double> x(eta0.begin(), eta0.end());
  std::vector<double> next(n);
  auto record = [&](double t) {
    raw.times.push_back(t);
    raw.states.insert(raw.states.end(), x.begin(), x.end());
    wrapped.times.push_back(t);
    for (double v : x) wrapped.states.push_back(wrap_angle(v));
  };
  record(0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t s = 0; s < n; ++s) {
      const double sigma = model.diffusion(x, s);
      double dw = 0.0;
      if (sigma != 0.0) {
        dw = sqrt_dt * sequence_normal(rng, Stream::torus, 0, static_cast<std::uint32_t>(s),
                                       static_cast<std::uint32_t>(k));
      }
      next[s] = x[s] + model.drift(x, s) * config.dt + sigma * dw;
      if (!std::isfinite(next[s])) {
        throw StepError("non-finite angle at site " + std::to_string(s) + " (step " + std::to_string(k) + ")", k);
      }
    }
    x.swap(next);
    if ((k + 1) % config.save_stride == 0) record(static_cast<double>(k + 1) * config.dt);
  }
  if (lifted) *lifted = std::move(raw);
  return wrapped;
}

// ---------------------------------------------------------------------------
// Quantum lattice

int QuantumModel::min_grid_points() const {
  const int degree = std::max(1, base.drift.f0().degree());
  return (degree + 1) * modes + 1;
}

int QuantumModel::effective_grid_points() const { return grid_points == 0 ? min_grid_points() : grid_points; }

void QuantumModel::validate() const {
  if (modes < 1) throw ConfigError("mode cutoff M must be >= 1");
  if (grid_points != 0 && grid_points < min_grid_points()) {
    std::ostringstream msg;
    msg << "collocation grid of " << grid_points << " points aliases a degree-" << base.drift.f0().degree()
        << " drift at cutoff M = " << modes << "; need at least " << min_grid_points();
    throw ConfigError(msg.str());
  }
  if (base.noise.correlated()) throw ConfigError("correlated observation noise is not supported on the quantum lattice");
}

std::size_t quantum_slot(const QuantumModel& model, std::size_t site, int k, int part) {
  const std::size_t base = site * model.per_site();
  if (k == 0) return base;
  return base + static_cast<std::size_t>(2 * k - 1 + part);
}

std::complex<double> quantum_coefficient(const QuantumModel& model, std::span<const double> state,
                                         std::size_t site, int k) {
  if (k == 0) return {state[quantum_slot(model, site, 0, 0)], 0.0};
  const int ak = std::abs(k);
  const std::complex<double> c{state[quantum_slot(model, site, ak, 0)], state[quantum_slot(model, site, ak, 1)]};
  return k > 0 ? c : std::conj(c);
}

double quantum_field(const QuantumModel& model, std::span<const double> state, std::size_t site, double z) {
  double acc = state[quantum_slot(model, site, 0, 0)];
  for (int k = 1; k <= model.modes; ++k) {
    const double arg = 2.0 * std::numbers::pi * k * z;
    acc += 2.0 * (state[quantum_slot(model, site, k, 0)] * std::cos(arg) -
                  state[quantum_slot(model, site, k, 1)] * std::sin(arg));
  }
  return acc;
}

SignalPath simulate_quantum_lattice(std::span<const double> x0, const QuantumModel& model, const SimConfig& config,
                                    std::uint32_t index) {
  config.validate();
  model.validate();
  const Model& base = model.base;
  base.noise.validate(base.site_count());
  if (config.scheme == Scheme::split_step && config.dt * base.drift.eta() >= 1.0) {
    throw ConfigError("dt * eta >= 1: implicit drift step is not monotone");
  }
  const std::size_t sites = base.site_count();
  const std::size_t per = model.per_site();
  const std::size_t dim = model.state_dim();
  if (x0.size() != dim) throw ConfigError("initial quantum state has the wrong length");

  const std::size_t steps = config.step_count();
  const double dt = config.dt;
  const double sqrt_dt = std::sqrt(dt);
  const CounterRng rng(config.seed);
  const LinearPropagator lattice_flow(base.interaction, dt);

  std::vector<double> mode_decay(per);
  for (std::size_t r = 0; r < per; ++r) {
    const double k = static_cast<double>((r + 1) / 2);
    const double lam = 2.0 * std::numbers::pi * k;
    mode_decay[r] = std::exp(-lam * lam * dt);
  }

  const int grid = model.effective_grid_points();
  const auto g = static_cast<std::size_t>(grid);
  const auto m = static_cast<std::size_t>(model.modes);
  std::vector<double> cos_tab(g * m);
  std::vector<double> sin_tab(g * m);
  for (std::size_t p = 0; p < g; ++p) {
    for (std::size_t k = 1; k <= m; ++k) {
      const double arg = 2.0 * std::numbers::pi * static_cast<double>(k * p) / grid;
      cos_tab[p * m + k - 1] = std::cos(arg);
      sin_tab[p * m + k - 1] = std::sin(arg);
    }
  }

  SignalPath path;
  path.state_dim = dim;
  path.mode_count = per;
  path.save_stride = config.save_stride;
  path.times.push_back(0.0);
  path.states.assign(x0.begin(), x0.end());

  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> column(sites);
  std::vector<double> scratch(2 * sites);
  std::vector<double> field(g);
  const auto& f0 = base.drift.f0();
  const double c = base.drift.f1_c();

  for (std::size_t step = 0; step < steps; ++step) {
    // Linear flow, mode by mode.
    for (std::size_t r = 0; r < per; ++r) {
      for (std::size_t s = 0; s < sites; ++s) column[s] = x[s * per + r];
      lattice_flow.apply(column, scratch);
      for (std::size_t s = 0; s < sites; ++s) x[s * per + r] = column[s] * mode_decay[r];
    }
    // Local nonlinearity on the collocation grid.
    if (!base.drift.is_zero()) {
      for (std::size_t s = 0; s < sites; ++s) {
        const double* coeff = &x[s * per];
        for (std::size_t p = 0; p < g; ++p) {
          double v = coeff[0];
          for (std::size_t k = 1; k <= m; ++k) {
            v += 2.0 * (coeff[2 * k - 1] * cos_tab[p * m + k - 1] - coeff[2 * k] * sin_tab[p * m + k - 1]);
          }
          double u;
          try {
            if (config.scheme == Scheme::split_step) {
              u = solve_implicit(f0, dt, v) + dt * c * v;
            } else {
              const double f = f0(v);
              u = v + dt * f / (1.0 + dt * std::abs(f)) + dt * c * v;
            }
          } catch (const NumericError& e) {
            throw StepError(std::string(e.what()) + " (step " + std::to_string(step) + ")", step);
          }
          field[p] = u;
        }
        double* out = &x[s * per];
        double acc = 0.0;
        for (std::size_t p = 0; p < g; ++p) acc += field[p];
        out[0] = acc / grid;
        for (std::size_t k = 1; k <= m; ++k) {
          double re = 0.0;
          double im = 0.0;
          for (std::size_t p = 0; p < g; ++p) {
            re += field[p] * cos_tab[p * m + k - 1];
            im -= field[p] * sin_tab[p * m + k - 1];
          }
          out[2 * k - 1] = re / grid;
          out[2 * k] = im / grid;
        }
      }
    }
    // Cylindrical noise, one real degree of freedom per slot.
    for (std::size_t s = 0; s < sites; ++s) {
      const double b = base.noise.b(s) * base.noise.sigma1;
      if (b == 0.0) continue;
      for (std::size_t r = 0; r < per; ++r) {
        x[s * per + r] += b * sqrt_dt *
                          sequence_normal(rng, Stream::quantum, index, static_cast<std::uint32_t>(s * per + r),
                                          static_cast<std::uint32_t>(step));
      }
    }
    for (std::size_t i = 0; i < dim; ++i) {
      if (!std::isfinite(x[i])) throw StepError("non-finite mode coefficient (step " + std::to_string(step) + ")", step);
    }
    if ((step + 1) % config.save_stride == 0) {
      path.times.push_back(static_cast<double>(step + 1) * dt);
      path.states.insert(path.states.end(), x.begin(), x.end());
    }
  }
  return path;
}

// ---------------------------------------------------------------------------
// Stochastic convolution

ConvolutionStats stochastic_convolution(const Model& model, const SimConfig& config, std::size_t n_mc) {
  config.validate();
  if (n_mc < 2) throw ConfigError("stochastic_convolution needs at least two samples");
  const std::size_t n = model.site_count();
  if (!model.interaction.is_symmetric()) throw ConfigError("stochastic_convolution requires a symmetric A");
  const double diffusion = model.noise.diffusion(0);
  for (std::size_t s = 1; s < n; ++s) {
    if (model.noise.diffusion(s) != diffusion) throw ConfigError("stochastic_convolution requires uniform noise");
  }
  const double sd = std::sqrt(diffusion);

  const auto dense = model.interaction.dense();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dense[i * n + j];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const Eigen::MatrixXd v = eig.eigenvectors();

  const double dt = config.dt;
  const std::size_t steps = config.step_count();
  std::vector<double> decay(n);
  std::vector<double> kick(n);
  auto ou_var = [](double lam, double t) { return lam == 0.0 ? t : std::expm1(2.0 * lam * t) / (2.0 * lam); };
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = lambda(static_cast<Eigen::Index>(k));
    decay[k] = std::exp(lam * dt);
    kick[k] = sd * std::sqrt(ou_var(lam, dt));
  }

  const CounterRng rng(config.seed);
  const double p_k = 2.0 * model.lattice.growth_exponent();
  std::vector<double> sup_h(n_mc);
  std::vector<double> sup_k(n_mc);
  std::vector<double> sup_f(n_mc);
  std::vector<double> terminal(n_mc * n);

  parallel_for(n_mc, [&](std::size_t rep) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<double> xs(n);
    std::vector<double> fx(n);
    double best_h = 0.0;
    double best_k = 0.0;
    double best_f = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      if (sd != 0.0) {
        for (std::size_t k = 0; k < n; ++k) {
          y(static_cast<Eigen::Index>(k)) =
              decay[k] * y(static_cast<Eigen::Index>(k)) +
              kick[k] * sequence_normal(rng, Stream::convolution, static_cast<std::uint32_t>(rep),
                                        static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(step));
        }
      }
      x = v * y;
      for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x(static_cast<Eigen::Index>(i));
        fx[i] = model.drift(xs[i]);
      }
      best_h = std::max(best_h, weighted_norm(xs, model.lattice, 2.0));
      best_k = std::max(best_k, weighted_norm(xs, model.lattice, p_k));
      best_f = std::max(best_f, weighted_norm(fx, model.lattice, p_k));
    }
    sup_h[rep] = best_h;
    sup_k[rep] = best_k;
    sup_f[rep] = best_f;
    for (std::size_t i = 0; i < n; ++i) terminal[rep * n + i] = x(static_cast<Eigen::Index>(i));
  });

  ConvolutionStats out;
  out.samples = n_mc;
  const auto eh = mean_estimate(sup_h);
  const auto ek = mean_estimate(sup_k);
  const auto ef = mean_estimate(sup_f);
  out.sup_norm_mean = eh.mean;
  out.sup_norm_stderr = eh.std_error;
  out.sup_k_norm_mean = ek.mean;
  out.sup_k_norm_stderr = ek.std_error;
  out.sup_drift_norm_mean = ef.mean;
  out.sup_drift_norm_stderr = ef.std_error;

  const double horizon = static_cast<double>(steps) * dt;
  out.terminal_variance.resize(n);
  out.terminal_variance_exact.assign(n, 0.0);
  std::vector<double> col(n_mc);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t rep = 0; rep < n_mc; ++rep) col[rep] = terminal[rep * n + i];
    out.terminal_variance[i] = mean_estimate(col).variance;
    for (std::size_t k = 0; k < n; ++k) {
      const double vik = v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      out.terminal_variance_exact[i] += vik * vik * diffusion * ou_var(lambda(static_cast<Eigen::Index>(k)), horizon);
    }
  }
  return out;
}

}  // namespace spinfilter
