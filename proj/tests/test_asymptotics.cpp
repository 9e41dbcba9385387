#include <doctest.h>

#include <cmath>
#include <numbers>

#include "spinfilter/asymptotics.hpp"
#include "spinfilter/errors.hpp"
#include "spinfilter/reference.hpp"

using namespace spinfilter;

namespace {

SimConfig sim(double dt, std::uint64_t seed) {
  SimConfig c;
  c.dt = dt;
  c.horizon = 1.0;
  c.seed = seed;
  return c;
}

FilterConfig fcfg(std::size_t n, std::uint64_t seed) {
  FilterConfig c;
  c.n_particles = n;
  c.seed = seed;
  return c;
}

CylindricalFunction site_fn(Shape s, std::size_t sites = 1) { return CylindricalFunction::at_site(s, 0, sites); }

std::vector<double> grid(double step, double end) {
  std::vector<double> t;
  for (int k = 0; k * step <= end + 1e-12; ++k) t.push_back(k * step);
  return t;
}

}  // namespace

TEST_CASE("semigroup at t = 0 and on constants") {
  const auto m = scalar_model(1.0, Polynomial({0.0, 0.0, 0.0, -1.0}));
  const std::vector<double> x{0.7};
  const std::vector<double> t{0.0, 0.5};
  const auto sq = estimate_semigroup(x, site_fn(Shape::square).as_function(), t, 200, m, sim(1e-2, 1));
  CHECK(sq.values[0] == doctest::Approx(0.49).epsilon(1e-14));
  CHECK(sq.std_error[0] == 0.0);
  const auto one = estimate_semigroup(x, site_fn(Shape::constant).as_function(), t, 200, m, sim(1e-2, 1));
  CHECK(one.values[1] == 1.0);
  const std::vector<double> off{0.0, 0.015};
  CHECK_THROWS_AS(estimate_semigroup(x, site_fn(Shape::identity).as_function(), off, 10, m, sim(1e-2, 1)),
                  ConfigError);
}

TEST_CASE("OU semigroup decays as e^{-alpha t} x") {
  const double alpha = 1.5;
  const auto m = scalar_model(alpha);
  const std::vector<double> x{2.0};
  const auto t = grid(0.25, 2.0);
  const auto est = estimate_semigroup(x, site_fn(Shape::identity).as_function(), t, 20000, m, sim(1e-2, 2));
  for (std::size_t k = 1; k < t.size(); ++k) {
    CHECK(std::abs(est.values[k] - std::exp(-alpha * t[k]) * 2.0) < 3.0 * est.std_error[k]);
  }
}

TEST_CASE("OU lattice site variance matches the Fourier-Lyapunov value") {
  const double alpha = 0.5;
  const LatticeSpec lat(1, 2, Boundary::periodic, {WeightKind::uniform, 0.0, 2.0});
  const Model m{lat, build_discrete_laplacian(lat, alpha), DriftSpec(), NoiseSpec{{1.0}, 1.0, 0.0}};
  double expected = 0.0;
  const int n = 5;
  for (int k = 0; k < n; ++k) {
    const double s = std::sin(std::numbers::pi * k / n);
    expected += 1.0 / (2.0 * (alpha + 4.0 * s * s));
  }
  expected /= n;
  InvariantOptions opt;
  opt.horizon = 400.0;
  const auto rep = estimate_invariant_measure(m, sim(1e-3, 3), opt);
  CHECK(rep.converged);
  CHECK(std::abs(rep.pooled_variance - expected) < 3.0 * rep.pooled_variance_se);
  for (std::size_t s = 0; s < lat.site_count(); ++s) CHECK(std::abs(rep.site_mean[s]) < 3.0 * rep.site_mean_se[s]);
}

TEST_CASE("invariant measure of the pure quartic potential") {
  // dX = -X^3 dt + dW has density proportional to exp(-x^4 / 2).
  const auto m = scalar_model(0.0, Polynomial({0.0, 0.0, 0.0, -1.0}));
  const double var = std::sqrt(2.0) * std::tgamma(0.75) / std::tgamma(0.25);
  CHECK(var == doctest::Approx(0.478).epsilon(1e-3));
  InvariantOptions opt;
  opt.horizon = 500.0;
  opt.burn_in = 10.0;
  const std::vector<CylindricalFunction> dict{site_fn(Shape::identity), site_fn(Shape::cube)};
  const auto rep = estimate_invariant_measure(m, sim(1e-3, 4), opt, dict);
  CHECK(std::abs(rep.pooled_variance - var) < 3.0 * rep.pooled_variance_se);
  CHECK(std::abs(rep.moments[0].mean) < 3.0 * rep.moments[0].std_error);
  CHECK(std::abs(rep.moments[1].mean) < 3.0 * rep.moments[1].std_error);
  CHECK(rep.moments[1].name == "x3");
}

TEST_CASE("rate fit recovers a synthetic exponential") {
  const auto t = grid(0.1, 3.0);
  std::vector<double> gap;
  std::vector<double> se;
  for (double s : t) {
    gap.push_back(3.0 * std::exp(-2.0 * s));
    se.push_back(1e-9);
  }
  const auto fit = fit_convergence_rate(t, gap, se, 1.0, 1.0);
  CHECK(fit.omega == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(fit.c == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fit.envelope_ok);

  const std::vector<double> tiny(t.size(), 1e-12);
  const std::vector<double> noisy(t.size(), 1.0);
  CHECK_THROWS_AS(fit_convergence_rate(t, tiny, noisy, 1.0, 1.0), ValidationError);
}

TEST_CASE("OU rate fit is within 15% of alpha") {
  const auto m = scalar_model(1.0);
  const std::vector<double> x{2.0};
  const auto t = grid(0.25, 3.0);
  const auto est = estimate_semigroup(x, site_fn(Shape::identity).as_function(), t, 40000, m, sim(1e-2, 5));
  // mu(x) = 0 exactly, so the gap is the semigroup value itself.
  const auto fit = fit_convergence_rate(t, est.values, est.std_error, 2.0, 1.0);
  CHECK(fit.omega == doctest::Approx(1.0).epsilon(0.15));
  CHECK(fit.envelope_ok);
}

TEST_CASE("measured rate is at least the guaranteed rate for a double well") {
  const auto m = scalar_model(2.0, Polynomial({0.0, 1.0, 0.0, -1.0}));
  CHECK(m.guaranteed_rate() == doctest::Approx(1.0).epsilon(1e-9));
  const auto t = grid(0.2, 3.0);
  const auto phi = site_fn(Shape::identity).as_function();
  const std::vector<double> xp{2.0};
  const std::vector<double> xm{-2.0};
  const auto up = estimate_semigroup(xp, phi, t, 20000, m, sim(1e-2, 6));
  const auto down = estimate_semigroup(xm, phi, t, 20000, m, sim(1e-2, 7));
  std::vector<double> gap(t.size());
  std::vector<double> se(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    gap[k] = up.values[k] - down.values[k];
    se[k] = std::hypot(up.std_error[k], down.std_error[k]);
  }
  const auto fit = fit_convergence_rate(t, gap, se, 2.0, 1.0);
  CHECK(fit.omega >= m.guaranteed_rate() * (1.0 - fit.tolerance) - 0.05);
  CHECK(fit.envelope_ok);
}

TEST_CASE("generator and carre du champ closed forms") {
  const auto m = scalar_model(1.5, {}, 0.0, 2.0, 1.0, 0.0);
  std::vector<double> scratch(1);
  const std::vector<double> x{0.8};
  // L x^2 = 2x(-1.5x) + b^2
  CHECK(generator_apply(m, site_fn(Shape::square), x, scratch) == doctest::Approx(-3.0 * 0.64 + 4.0));
  CHECK(carre_du_champ(m, site_fn(Shape::identity), site_fn(Shape::identity), x) == doctest::Approx(4.0));
  CHECK(carre_du_champ(m, site_fn(Shape::square), site_fn(Shape::identity), x) == doctest::Approx(4.0 * 1.6));
  const auto rate = linear_generator_rate(m, site_fn(Shape::identity));
  REQUIRE(rate.has_value());
  CHECK(*rate == doctest::Approx(-1.5));
  CHECK_FALSE(linear_generator_rate(m, site_fn(Shape::square)).has_value());
  const auto cubic = scalar_model(1.0, Polynomial({0.0, 0.0, 0.0, -1.0}));
  CHECK_FALSE(linear_generator_rate(cubic, site_fn(Shape::identity)).has_value());
}

TEST_CASE("barycenter of an unobserved OU filter is the invariant mean") {
  const auto m = scalar_model(1.0);
  FilteringProblem p{m, SensorSpec::null(1, 1), 1e-2, 1e-2, Scheme::split_step};
  p.validate();
  BarycenterOptions opt;
  opt.horizon = 200.0;
  opt.filter = fcfg(200, 8);
  opt.invariant.horizon = 200.0;
  opt.seed = 8;
  const std::vector<CylindricalFunction> dict{site_fn(Shape::identity), site_fn(Shape::square)};
  const auto rep = barycenter_check(p, dict, opt);
  REQUIRE(rep.entries.size() == 2);
  CHECK(rep.ok);
  CHECK(std::abs(rep.entries[0].invariant_mean) < 3.0 * rep.entries[0].invariant_se);
  CHECK(rep.entries[1].invariant_mean == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("barycenter of the observed linear-Gaussian filter") {
  const auto m = scalar_model(1.0);
  FilteringProblem p{m, SensorSpec::identity(1), 1e-2, 1e-2, Scheme::split_step};
  p.validate();
  BarycenterOptions opt;
  opt.horizon = 200.0;
  opt.filter = fcfg(300, 9);
  opt.invariant.horizon = 200.0;
  opt.seed = 9;
  const std::vector<CylindricalFunction> dict{site_fn(Shape::identity), site_fn(Shape::square)};
  const auto rep = barycenter_check(p, dict, opt);
  CHECK(rep.ok);
  for (const auto& e : rep.entries) CHECK(std::abs(e.z) < 3.0);
}

TEST_CASE("error covariance: MC, ODE and Riccati agree on the linear model") {
  const auto m = scalar_model(1.0);
  FilteringProblem p{m, SensorSpec::identity(1), 1e-3, 1e-2, Scheme::split_step};
  p.validate();
  CovarianceOptions opt;
  opt.replicas = 100;
  opt.horizon = 2.0;
  opt.filter = fcfg(300, 10);
  opt.seed = 10;
  const auto fx = site_fn(Shape::identity);
  const auto tr = error_covariance_evolution(p, fx, fx, opt);
  REQUIRE(tr.t.size() == 201);
  CHECK(tr.ode[0] == doctest::Approx(tr.posterior[0]).epsilon(1e-12));
  CHECK(tr.sup_gap_z < 3.0);
  double worst = 0.0;
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    const double ric = riccati_solution(ScalarLinearGaussian{}, tr.t[k]);
    worst = std::max(worst, std::abs(tr.ode[k] - ric) / ric);
    CHECK(tr.posterior[k] >= -3.0 * tr.posterior_se[k]);
  }
  CHECK(worst < 0.02);
}

TEST_CASE("error covariance is symmetric in f and g") {
  const auto m = scalar_model(1.0, Polynomial({0.0, 0.0, 0.0, -1.0}));
  FilteringProblem p{m, SensorSpec::identity(1), 1e-2, 1e-2, Scheme::split_step};
  p.validate();
  CovarianceOptions opt;
  opt.replicas = 4;
  opt.horizon = 0.5;
  opt.filter = fcfg(100, 11);
  opt.seed = 11;
  const auto f = site_fn(Shape::identity);
  const auto g = site_fn(Shape::tanh);
  const auto a = error_covariance_evolution(p, f, g, opt);
  const auto b = error_covariance_evolution(p, g, f, opt);
  for (std::size_t k = 0; k < a.t.size(); ++k) {
    CHECK(a.mc[k] == doctest::Approx(b.mc[k]).epsilon(1e-12));
    CHECK(a.ode[k] == doctest::Approx(b.ode[k]).epsilon(1e-12));
  }
}
