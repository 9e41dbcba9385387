#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spinfilter/model.hpp"
#include "spinfilter/rng.hpp"

namespace spinfilter {

enum class Scheme {
  split_step,   ///< exact linear flow, implicit f0, explicit f1, additive noise
  explicit_em,  ///< tamed explicit Euler-Maruyama
};

struct SimConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  Scheme scheme = Scheme::split_step;
  std::uint64_t seed = 0;
  std::size_t save_stride = 1;

  /// horizon / dt; throws ConfigError unless it is an integer to 1e-9.
  [[nodiscard]] std::size_t step_count() const;
  void validate() const;
};

/// Save points of a trajectory. `states` is row-major: one row of
/// `state_dim` values per save time.
struct SignalPath {
  std::vector<double> times;
  std::vector<double> states;
  std::size_t state_dim = 0;
  std::size_t mode_count = 1;
  std::size_t save_stride = 1;

  [[nodiscard]] std::size_t size() const { return times.size(); }
  [[nodiscard]] std::span<const double> state(std::size_t k) const {
    return {states.data() + k * state_dim, state_dim};
  }
};

/// Action of exp(tau A) on a vector for a bounded interaction operator.
class LinearPropagator {
 public:
  LinearPropagator(const InteractionOperator& a, double tau);

  void apply(std::span<double> x, std::span<double> scratch) const;
  [[nodiscard]] bool is_identity() const { return identity_; }

 private:
  const InteractionOperator* a_;
  double tau_;
  bool identity_ = false;
  bool diagonal_ = false;
  std::vector<double> diag_factor_;
  std::size_t substeps_ = 1;
};

/// Root u of u - dt f0(u) = v (monotone when dt * eta < 1).
/// Safeguarded Newton with bisection fallback; throws NumericError if no
/// bracket is found within 100 expansions or the iteration does not settle.
double solve_implicit(const Polynomial& f0, double dt, double v);

/// One deterministic-plus-additive step of the classical lattice SPDE.
class SignalStepper {
 public:
  SignalStepper(const Model& model, double dt, Scheme scheme);

  [[nodiscard]] const Model& model() const { return *model_; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] Scheme scheme() const { return scheme_; }
  [[nodiscard]] std::size_t dim() const { return model_->site_count(); }

  /// x <- Phi_dt(x) + increment. `scratch` needs 2 * dim() entries.
  void advance(std::span<double> x, std::span<const double> increment, std::span<double> scratch) const;

  /// Deterministic part only (linear flow and local nonlinearity).
  void deterministic(std::span<double> x, std::span<double> scratch) const;

  /// b (sigma1 sqrt(dt) xi_W + sigma2 sqrt(dt) xi_Z) drawn for path `index`
  /// at dynamics step `step`. xi_Z is the observation-noise stream, so a
  /// correlated signal shares its draws with generate_observations.
  /// With `include_shared = false` the sigma2 term is left out.
  void noise_increment(const CounterRng& rng, std::uint32_t index, std::uint32_t step, std::span<double> out,
                       bool include_shared = true) const;

 private:
  const Model* model_;
  double dt_;
  Scheme scheme_;
  LinearPropagator propagator_;
  double sqrt_dt_;
};

/// Single step from `x` for path `index`, dynamics step `step`.
std::vector<double> step_signal(std::span<const double> x, const Model& model, double dt, Scheme scheme,
                                const CounterRng& rng, std::uint32_t index = 0, std::uint32_t step = 0);

/// Integrates the lattice SPDE; `index` selects the noise path.
SignalPath simulate_signal(std::span<const double> x0, const Model& model, const SimConfig& config,
                           std::uint32_t index = 0);

// ---------------------------------------------------------------------------
// Torus-valued spins

/// amplitude * cos(self_freq * x_gamma + neighbor_freq * x_{gamma+offset} + phase)
struct TrigTerm {
  std::vector<int> offset;
  double amplitude = 0.0;
  int self_freq = 0;
  int neighbor_freq = 0;
  double phase = 0.0;
};

/// Drift b_gamma and diffusion sigma_gamma as finite trigonometric
/// polynomials in angles within range L of gamma.
struct TorusModel {
  LatticeSpec lattice;
  double drift_constant = 0.0;
  std::vector<TrigTerm> drift_terms;
  double diffusion_constant = 0.0;
  std::vector<TrigTerm> diffusion_terms;

  [[nodiscard]] double interaction_range() const;
  [[nodiscard]] double drift(std::span<const double> angles, std::size_t site) const;
  [[nodiscard]] double diffusion(std::span<const double> angles, std::size_t site) const;
};

/// Euler-Maruyama on the lifted angles. `lifted` receives the unwrapped
/// path when non-null; the returned path is reported modulo 2 pi.
SignalPath simulate_torus(std::span<const double> eta0, const TorusModel& model, const SimConfig& config,
                          SignalPath* lifted = nullptr);

// ---------------------------------------------------------------------------
// Lattice of periodic fields on [0, 1]

/// Per site, x_gamma(z) = c_0 + 2 sum_{k=1..M} Re(c_k e^{2 pi i k z}).
/// Stored real layout per site: [c_0, Re c_1, Im c_1, ..., Re c_M, Im c_M].
struct QuantumModel {
  Model base;
  int modes = 4;            ///< cutoff M
  int grid_points = 0;      ///< collocation points; 0 selects the minimal alias-free grid

  [[nodiscard]] std::size_t per_site() const { return static_cast<std::size_t>(2 * modes + 1); }
  [[nodiscard]] std::size_t state_dim() const { return base.site_count() * per_site(); }
  [[nodiscard]] int min_grid_points() const;
  [[nodiscard]] int effective_grid_points() const;
  void validate() const;
};

/// Real-layout slot of mode k (k >= 0); part 0 real, 1 imaginary.
std::size_t quantum_slot(const QuantumModel& model, std::size_t site, int k, int part);

/// Complex coefficient c_k for k in [-M, M] (Hermitian extension).
std::complex<double> quantum_coefficient(const QuantumModel& model, std::span<const double> state,
                                         std::size_t site, int k);

/// Field value x_gamma(z).
double quantum_field(const QuantumModel& model, std::span<const double> state, std::size_t site, double z);

SignalPath simulate_quantum_lattice(std::span<const double> x0, const QuantumModel& model,
                                    const SimConfig& config, std::uint32_t index = 0);

// ---------------------------------------------------------------------------
// Stochastic convolution W_A(t) = int_0^t S(t-s) B dW(s)

struct ConvolutionStats {
  double sup_norm_mean = 0.0;        ///< E sup_t |W_A(t)|_H (l^2_rho)
  double sup_norm_stderr = 0.0;
  double sup_k_norm_mean = 0.0;      ///< E sup_t |W_A(t)|_K (l^{2s}_rho)
  double sup_k_norm_stderr = 0.0;
  double sup_drift_norm_mean = 0.0;  ///< E sup_t |F(W_A(t))|_K
  double sup_drift_norm_stderr = 0.0;
  std::vector<double> terminal_variance;  ///< per-site sample variance at T
  std::vector<double> terminal_variance_exact;
  std::size_t samples = 0;
};

/// Exact eigenmode OU recursion; requires symmetric A and uniform noise.
ConvolutionStats stochastic_convolution(const Model& model, const SimConfig& config, std::size_t n_mc);

}  // namespace spinfilter
