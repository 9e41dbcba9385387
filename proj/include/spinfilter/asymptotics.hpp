#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spinfilter/dynamics.hpp"
#include "spinfilter/filter.hpp"
#include "spinfilter/functionals.hpp"
#include "spinfilter/model.hpp"

namespace spinfilter {

struct SemigroupEstimate {
  std::vector<double> t;
  std::vector<double> values;
  std::vector<double> std_error;
  std::vector<double> x;  ///< starting point
};

/// P_t phi(x) = E phi(X(t, x)) over n_mc paths. `sim` supplies dt, scheme
/// and seed; every grid time must be a multiple of dt.
SemigroupEstimate estimate_semigroup(std::span<const double> x, const TestFunction& phi,
                                     std::span<const double> t_grid, std::size_t n_mc, const Model& model,
                                     const SimConfig& sim);

struct InvariantOptions {
  double horizon = 100.0;  ///< sampled time per chain, after burn-in
  double burn_in = -1.0;   ///< < 0: 5 / omega, or 10% of the horizon when omega <= 0
  std::size_t n_chains = 4;
  double spread = 2.0;  ///< chain c starts at spread * (2c / (n - 1) - 1) on every site
  std::size_t batches = 20;
  std::size_t sample_every = 1;
};

struct MomentEstimate {
  std::string name;
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> chain_means;
};

struct InvariantReport {
  std::vector<double> site_mean;
  std::vector<double> site_mean_se;
  std::vector<double> site_variance;
  std::vector<double> site_variance_se;
  double pooled_variance = 0.0;  ///< site-averaged variance
  double pooled_variance_se = 0.0;
  std::vector<MomentEstimate> moments;  ///< one per dictionary entry
  double burn_in = 0.0;
  double max_chain_z = 0.0;  ///< largest |chain mean - pooled| / chain stderr
  bool converged = true;     ///< false when some chain disagrees beyond 5 sigma
  std::size_t samples_per_chain = 0;
};

/// Long-run averages over dispersed chains with batch-means errors.
InvariantReport estimate_invariant_measure(const Model& model, const SimConfig& sim, const InvariantOptions& options,
                                           std::span<const CylindricalFunction> dictionary = {});

/// Default burn-in: 5 / omega from the model metadata, else `fallback`.
double default_burn_in(const Model& model, double fallback);

struct RateFit {
  double omega = 0.0;
  double c = 0.0;
  double residual = 0.0;   ///< RMS of the log-gap fit
  double tolerance = 0.0;  ///< exp(3 residual) - 1
  double t_min = 0.0;
  double t_max = 0.0;
  std::size_t points = 0;
  bool envelope_ok = false;
  double max_excess = 0.0;  ///< largest gap / envelope ratio
  std::vector<double> envelope;
};

/// Least-squares fit of log|gap| = b - omega t over the points with
/// |gap| > 3 stderr, then C = max(0, e^b / Lip - 2|x|). Every gap must sit
/// under (C + 2|x|) e^{-omega t} Lip (1 + tolerance) + 3 stderr.
/// Throws ValidationError with fewer than 4 significant points.
RateFit fit_convergence_rate(std::span<const double> t, std::span<const double> gap,
                             std::span<const double> gap_se, double x_norm, double phi_lip);

struct BarycenterOptions {
  double horizon = 2000.0;
  double burn_in = -1.0;  ///< < 0: default_burn_in with 10% of the horizon as fallback
  std::size_t batches = 20;
  GaussianPrior prior;
  FilterConfig filter;
  InvariantOptions invariant;
  std::uint64_t seed = 0;
};

struct BarycenterEntry {
  std::string name;
  double filter_average = 0.0;
  double filter_se = 0.0;
  double invariant_mean = 0.0;
  double invariant_se = 0.0;
  double z = 0.0;
  bool ok = false;
};

struct BarycenterReport {
  std::vector<BarycenterEntry> entries;
  bool ok = false;
  bool invariant_converged = true;
  double burn_in = 0.0;
  std::string caveat;
};

/// Time average of pi_t(f) along one long filtered run against mu(f).
BarycenterReport barycenter_check(const FilteringProblem& problem, std::span<const CylindricalFunction> dictionary,
                                  const BarycenterOptions& options);

/// Generator applied to a cylindrical function:
///   phi'(u) <e, Ax + F(x)> + 1/2 phi''(u) sum_s e_s^2 diffusion_s.
double generator_apply(const Model& model, const CylindricalFunction& f, std::span<const double> x,
                       std::span<double> scratch);

/// Carre du champ sum_s e_s e'_s phi_f' phi_g' diffusion_s.
double carre_du_champ(const Model& model, const CylindricalFunction& f, const CylindricalFunction& g,
                      std::span<const double> x);

/// lambda with A f = lambda f + const when the model is linear and f is a
/// linear functional along an eigendirection of A^T; nullopt otherwise.
std::optional<double> linear_generator_rate(const Model& model, const CylindricalFunction& f);

struct CovarianceOptions {
  std::size_t replicas = 100;
  double horizon = 5.0;
  GaussianPrior prior;
  FilterConfig filter;
  std::uint64_t seed = 0;
};

struct CovarianceTrajectory {
  std::vector<double> t;
  std::vector<double> mc;  ///< E[(f(X) - pi f)(g(X) - pi g)]
  std::vector<double> mc_se;
  std::vector<double> ode;  ///< integrated right-hand side
  std::vector<double> ode_se;
  std::vector<double> posterior;  ///< E[Cov_pi(f, g)] read off the particle clouds
  std::vector<double> posterior_se;
  std::vector<double> q;  ///< E[carre du champ]
  std::vector<double> q_se;
  double sup_gap = 0.0;
  double sup_gap_z = 0.0;  ///< max |mc - ode| / sqrt(mc_se^2 + ode_se^2)
  std::size_t replicas = 0;
};

/// Direct Monte-Carlo and ODE estimates of the filter error covariance over
/// replicated signal/filter runs. The ODE starts from the replica mean of
/// the prior ensemble covariance; terms closed by linear_generator_rate are
/// integrated exactly, the rest come from the particle clouds.
CovarianceTrajectory error_covariance_evolution(const FilteringProblem& problem, const CylindricalFunction& f,
                                                const CylindricalFunction& g, const CovarianceOptions& options);

}  // namespace spinfilter
