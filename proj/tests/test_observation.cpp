#include <doctest.h>

#include <cmath>

#include "spinfilter/errors.hpp"
#include "spinfilter/observation.hpp"
#include "spinfilter/parallel.hpp"
#include "spinfilter/reference.hpp"
#include "spinfilter/stats.hpp"

using namespace spinfilter;

namespace {

SimConfig sim(double dt, double horizon, std::uint64_t seed = 1, std::size_t stride = 1) {
  SimConfig c;
  c.dt = dt;
  c.horizon = horizon;
  c.seed = seed;
  c.save_stride = stride;
  return c;
}

double covariance(std::span<const double> a, std::span<const double> b) {
  const auto ma = mean_estimate(a).mean;
  const auto mb = mean_estimate(b).mean;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace

TEST_CASE("sensor construction and evaluation") {
  const auto id = SensorSpec::identity(3);
  CHECK(id.channels() == 3);
  const std::vector<double> x{1.0, -2.0, 0.5};
  CHECK(id(x) == x);

  const auto lin = SensorSpec::linear({1.0, 1.0, 0.0, 0.0, 0.0, 2.0}, 2);
  CHECK(lin(x) == std::vector<double>{-1.0, 1.0});

  const auto cw = SensorSpec::componentwise(Polynomial({0.0, 1.0, 0.0, 1.0}), {2, 0});
  const auto v = cw(x);
  CHECK(v[0] == doctest::Approx(0.5 + 0.125));
  CHECK(v[1] == doctest::Approx(2.0));

  const auto null = SensorSpec::null(2, 3);
  CHECK(null.is_zero());
  CHECK(null(x) == std::vector<double>{0.0, 0.0});

  auto bad = SensorSpec::componentwise(Polynomial({0.0, 1.0}), {5});
  CHECK_THROWS_AS(bad.validate(3), ConfigError);
  auto cubic = SensorSpec::componentwise(Polynomial({0.0, 0.0, 0.0, 1.0}), {0});
  cubic.validate(1);
  CHECK(cubic.growth_exponent() == doctest::Approx(3.0));
  for (double z : {-7.0, 0.3, 9.5}) {
    const std::vector<double> xz{z};
    CHECK(std::abs(cubic(xz)[0]) <= cubic.growth_constant() * (1.0 + std::pow(std::abs(z), 3.0)) + 1e-12);
  }
}

TEST_CASE("observation grid must align with the dynamics step") {
  CHECK(substeps_per_observation(1e-3, 1e-2) == 10);
  CHECK_THROWS_AS(substeps_per_observation(3e-3, 1e-2), ConfigError);
  const auto m = scalar_model(1.0);
  const auto p = simulate_signal(std::vector<double>{0.0}, m, sim(1e-3, 1.0, 1, 3));
  CHECK_THROWS_AS(generate_observations(p, SensorSpec::identity(1), m.noise, 1e-3, 1e-2, CounterRng(1)), ConfigError);
}

TEST_CASE("null sensor gives Brownian observations") {
  const auto m = scalar_model(1.0);
  const auto p = simulate_signal(std::vector<double>{0.0}, m, sim(1e-3, 10.0, 4));
  const auto obs = generate_observations(p, SensorSpec::null(3, 1), m.noise, 1e-3, 1e-3, CounterRng(4));
  REQUIRE(obs.steps() == 10000);
  for (std::size_t c = 0; c < 3; ++c) {
    double qv = 0.0;
    for (std::size_t n = 0; n < obs.steps(); ++n) qv += obs.increment(n)[c] * obs.increment(n)[c];
    CHECK(qv == doctest::Approx(10.0).epsilon(0.05));
  }
}

TEST_CASE("noiseless linear observations are exact") {
  const auto m = scalar_model(1.0);
  const auto p = simulate_signal(std::vector<double>{1.0}, m, sim(1e-3, 1.0, 2, 10));
  const auto sensor = SensorSpec::linear({2.5}, 1);
  const auto obs = generate_observations(p, sensor, m.noise, 1e-3, 1e-2, CounterRng(2), 0, true);
  for (std::size_t n = 0; n < obs.steps(); ++n) CHECK(obs.increment(n)[0] == 2.5 * p.state(n)[0] * 1e-2);
}

TEST_CASE("joint mode shares the observation noise with the signal") {
  const auto m = scalar_model(1.0, {}, 0.0, 1.0, 0.0, 1.0);
  const double dt_obs = 1e-2;
  const auto both = simulate_observed(std::vector<double>{0.0}, m, SensorSpec::identity(1), sim(1e-3, 100.0, 6, 10),
                                      dt_obs);
  const auto& obs = both.observations;
  std::vector<double> dy(obs.steps());
  std::vector<double> dx(obs.steps());
  for (std::size_t n = 0; n < obs.steps(); ++n) {
    const double x0 = both.signal.state(n)[0];
    const double x1 = both.signal.state(n + 1)[0];
    dy[n] = obs.increment(n)[0];
    dx[n] = x1 - x0 + x0 * dt_obs;
  }
  const double c = covariance(dy, dx);
  const double se = dt_obs * std::sqrt(2.0 / static_cast<double>(dy.size()));
  CHECK(std::abs(c - dt_obs) < 3.0 * se);
}

TEST_CASE("independent observation noise is uncorrelated with the signal noise") {
  const auto m = scalar_model(1.0);
  const double dt_obs = 1e-2;
  const auto both = simulate_observed(std::vector<double>{0.0}, m, SensorSpec::null(1, 1), sim(1e-3, 100.0, 6, 10),
                                      dt_obs);
  std::vector<double> dy(both.observations.steps());
  std::vector<double> dx(dy.size());
  for (std::size_t n = 0; n < dy.size(); ++n) {
    const double x0 = both.signal.state(n)[0];
    dy[n] = both.observations.increment(n)[0];
    dx[n] = both.signal.state(n + 1)[0] - x0 + x0 * dt_obs;
  }
  const double se = dt_obs * std::sqrt(1.0 / static_cast<double>(dy.size()));
  CHECK(std::abs(covariance(dy, dx)) < 3.0 * se);
}

TEST_CASE("log_likelihood_increment examples") {
  const std::vector<double> x{1.0};
  const std::vector<double> dy{0.1};
  CHECK(log_likelihood_increment(x, dy, 0.01, SensorSpec::null(1, 1)) == 0.0);
  CHECK(log_likelihood_increment(x, dy, 0.01, SensorSpec::identity(1)) == doctest::Approx(0.095).epsilon(1e-14));

  const std::vector<double> x3{0.3, -1.1, 2.0};
  const std::vector<double> dy3{0.05, -0.2, 0.01};
  const auto sensor = SensorSpec::componentwise(Polynomial({0.1, 1.0, 0.5}), {0, 1, 2});
  double sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto single = SensorSpec::componentwise(Polynomial({0.1, 1.0, 0.5}), {c});
    const std::vector<double> d{dy3[c]};
    sum += log_likelihood_increment(x3, d, 0.01, single);
  }
  CHECK(log_likelihood_increment(x3, dy3, 0.01, sensor) == doctest::Approx(sum).epsilon(1e-14));
}

TEST_CASE("likelihood ratio is a mean-one martingale under the reference measure") {
  const auto m = scalar_model(1.0);
  const auto sensor = SensorSpec::componentwise(Polynomial({0.2, 0.5}), {0});
  const std::size_t n = 10000;
  std::vector<double> q(n);
  parallel_for(n, [&](std::size_t i) {
    const auto idx = static_cast<std::uint32_t>(i);
    const auto path = simulate_signal(std::vector<double>{0.5}, m, sim(1e-2, 1.0, 21), idx);
    // Y independent of X: Brownian observations from the null sensor.
    const auto y = generate_observations(path, SensorSpec::null(1, 1), m.noise, 1e-2, 1e-2, CounterRng(22), idx);
    double ll = 0.0;
    for (std::size_t k = 0; k < y.steps(); ++k) ll += log_likelihood_increment(path.state(k), y.increment(k), 1e-2, sensor);
    q[i] = std::exp(ll);
  });
  const auto e = mean_estimate(q);
  CHECK(std::abs(e.mean - 1.0) < 3.0 * e.std_error);
}

TEST_CASE("aggregate merges increments") {
  ObservationPath obs;
  obs.dt_obs = 0.1;
  obs.channels = 2;
  obs.increments = {1, 2, 3, 4, 5, 6, 7, 8};
  const auto a = aggregate(obs, 2);
  CHECK(a.dt_obs == doctest::Approx(0.2));
  CHECK(a.increments == std::vector<double>{4, 6, 12, 14});
  CHECK_THROWS_AS(aggregate(obs, 3), ConfigError);
}

TEST_CASE("innovation with h = 0 is the observation path") {
  const auto m = scalar_model(1.0);
  const auto both = simulate_observed(std::vector<double>{0.0}, m, SensorSpec::null(2, 1), sim(1e-2, 1.0, 3), 1e-2);
  const std::vector<double> h(both.observations.steps() * 2, 0.0);
  const auto inn = innovation_path(both.observations, h);
  CHECK(inn.increments == both.observations.increments);
}

TEST_CASE("innovation of the exact Kalman-Bucy filter is a Wiener path") {
  const auto m = scalar_model(1.0);
  const double dt_obs = 1e-3;
  const auto both = simulate_observed(std::vector<double>{0.0}, m, SensorSpec::identity(1), sim(1e-3, 10.0, 8),
                                      dt_obs);
  const auto kb = kalman_bucy(ScalarLinearGaussian{}, both.observations);
  const std::size_t steps = both.observations.steps();
  const std::vector<double> h(kb.mean.begin(), kb.mean.begin() + static_cast<std::ptrdiff_t>(steps));
  const auto inn = innovation_path(both.observations, h);
  CHECK(inn.quadratic_variation[0] == doctest::Approx(10.0).epsilon(0.05));
  CHECK(std::abs(inn.lag1_autocorrelation[0]) < 3.0 / std::sqrt(static_cast<double>(steps)));
}

TEST_CASE("innovation with a wrong estimate keeps its QV but drifts") {
  const auto m = scalar_model(0.0, Polynomial({2.0, -1.0}), 0.0, 0.5);
  const double dt_obs = 1e-3;
  const auto both = simulate_observed(std::vector<double>{2.0}, m, SensorSpec::identity(1), sim(1e-3, 20.0, 5), dt_obs);
  const std::size_t steps = both.observations.steps();
  const auto inn = innovation_path(both.observations, std::vector<double>(steps, 0.0));
  CHECK(inn.quadratic_variation[0] == doctest::Approx(20.0).epsilon(0.05));
  double avg_h = 0.0;
  for (std::size_t n = 0; n < steps; ++n) avg_h += both.signal.state(n)[0];
  avg_h /= static_cast<double>(steps);
  CHECK(avg_h > 1.5);
  CHECK(std::abs(inn.mean_rate[0] - avg_h) < 3.0 / std::sqrt(20.0));
}
