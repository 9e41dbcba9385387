#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

#include "spinfilter/errors.hpp"
#include "spinfilter/model.hpp"

using namespace spinfilter;

namespace {

Eigen::MatrixXd dense_matrix(const InteractionOperator& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  const auto d = a.dense();
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = d[static_cast<std::size_t>(i * n + j)];
  }
  return m;
}

LatticeSpec flat(int d, int n) { return LatticeSpec(d, n, Boundary::periodic, {WeightKind::uniform, 0.0, 2.0}); }

}  // namespace

TEST_CASE("lattice index map round-trips and wraps") {
  const LatticeSpec lat(2, 2, Boundary::periodic);
  CHECK(lat.site_count() == 25);
  for (std::size_t i = 0; i < lat.site_count(); ++i) CHECK(lat.index(lat.coords(i)) == i);
  const std::vector<int> origin{0, 0};
  const auto o = lat.index(origin);
  CHECK(lat.site_norm(o) == 0.0);
  CHECK(lat.weight(o) == doctest::Approx(1.0));
  const std::vector<int> edge{2, 0};
  const std::vector<int> step{1, 0};
  const auto wrapped = lat.shifted(lat.index(edge), step);
  REQUIRE(wrapped);
  CHECK(lat.coords(*wrapped) == std::vector<int>{-2, 0});

  const LatticeSpec box(1, 2, Boundary::zero);
  const std::vector<int> right{2};
  const std::vector<int> one{1};
  CHECK_FALSE(box.shifted(box.index(right), one).has_value());
  CHECK_THROWS_AS(LatticeSpec(0, 1), ConfigError);
}

TEST_CASE("Laplacian annihilates constants on a periodic box") {
  const auto lat = flat(1, 1);
  const auto a = build_discrete_laplacian(lat, 0.0);
  const std::vector<double> ones(3, 1.0);
  std::vector<double> y(3, 9.0);
  a.apply(ones, y);
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("Laplacian diagonal is -2d in two dimensions") {
  for (int n : {1, 2, 3}) {
    const auto lat = flat(2, n);
    const auto a = build_discrete_laplacian(lat, 0.0);
    for (std::size_t i = 0; i < lat.site_count(); ++i) CHECK(a.diagonal(i) == doctest::Approx(-4.0));
  }
}

TEST_CASE("operator norm matches circulant eigenvalues and stays under the row-sum bound") {
  const auto lat = flat(1, 2);
  const auto a = build_discrete_laplacian(lat, 0.0);
  double expected = 0.0;
  for (int k = 0; k < 5; ++k) {
    const double s = std::sin(std::numbers::pi * k / 5.0);
    expected = std::max(expected, std::abs(-4.0 * s * s));
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense_matrix(a));
  CHECK(svd.singularValues()(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected <= 4.0);
  CHECK(a.max_abs_row_sum() == doctest::Approx(4.0));

  for (int d : {1, 2}) {
    for (double alpha : {0.0, 0.5}) {
      const auto l = flat(d, 2);
      const auto op = build_discrete_laplacian(l, alpha);
      const Eigen::JacobiSVD<Eigen::MatrixXd> s(dense_matrix(op));
      CHECK(op.max_abs_row_sum() == doctest::Approx(4.0 * d + alpha));
      CHECK(s.singularValues()(0) <= op.max_abs_row_sum() + 1e-12);
    }
  }
}

TEST_CASE("weighted_norm examples") {
  const LatticeSpec lat(1, 1, Boundary::periodic, {WeightKind::exponential, std::log(2.0), 2.0});
  CHECK(weighted_norm(std::vector<double>(3, 0.0), lat, 2.0) == 0.0);
  std::vector<double> unit(3, 0.0);
  const std::vector<int> origin{0};
  unit[lat.index(origin)] = 1.0;
  for (double p : {1.0, 2.0, 3.5}) CHECK(weighted_norm(unit, lat, p) == doctest::Approx(1.0));
  CHECK(weighted_norm(std::vector<double>(3, 1.0), lat, 2.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("weighted_norm is homogeneous and subadditive") {
  const LatticeSpec lat(2, 2, Boundary::periodic, {WeightKind::polynomial, 1.0, 3.0});
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  const std::size_t n = lat.site_count();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(n);
    std::vector<double> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = nd(gen);
      y[i] = nd(gen);
      s[i] = x[i] + y[i];
    }
    const double c = nd(gen);
    std::vector<double> cx(n);
    for (std::size_t i = 0; i < n; ++i) cx[i] = c * x[i];
    for (double p : {1.0, 2.0, 4.0}) {
      CHECK(weighted_norm(cx, lat, p) == doctest::Approx(std::abs(c) * weighted_norm(x, lat, p)).epsilon(1e-12));
      CHECK(weighted_norm(s, lat, p) <= weighted_norm(x, lat, p) + weighted_norm(y, lat, p) + 1e-12);
    }
  }
}

TEST_CASE("verify_hypotheses examples") {
  SUBCASE("zero operator") {
    const auto lat = flat(1, 2);
    const InteractionOperator zero(lat, {}, 0.0);
    const auto rep = verify_hypotheses(zero, lat);
    CHECK(rep.alpha == 0.0);
    CHECK(rep.beta == 0.0);
    CHECK(rep.ok);
  }
  SUBCASE("unweighted Laplacian") {
    const auto lat = flat(1, 3);
    const auto rep = verify_hypotheses(build_discrete_laplacian(lat, 0.0), lat);
    CHECK(rep.alpha == doctest::Approx(4.0));
    CHECK(rep.beta == doctest::Approx(4.0));
    CHECK(rep.norm_bound == doctest::Approx(4.0));
    CHECK(rep.ok);
  }
  SUBCASE("exponential weight") {
    for (double kappa : {0.3, 1.0, 2.0}) {
      const LatticeSpec lat(1, 3, Boundary::periodic, {WeightKind::exponential, kappa, 2.0});
      const auto a = build_discrete_laplacian(lat, 0.0);
      const auto rep = verify_hypotheses(a, lat);
      CHECK(rep.weight_ratio_bound == doctest::Approx(std::exp(kappa)));
      // Column sums computed here from rho(k) = exp(-kappa |k|).
      const auto m = dense_matrix(a);
      double beta = 0.0;
      for (int j = 0; j < 7; ++j) {
        double col = 0.0;
        for (int g = 0; g < 7; ++g) col += std::abs(m(g, j)) * std::exp(-kappa * (std::abs(g - 3) - std::abs(j - 3)));
        beta = std::max(beta, col);
      }
      CHECK(rep.beta == doctest::Approx(beta).epsilon(1e-12));
      CHECK(rep.beta <= rep.alpha * std::exp(kappa * a.range()) + 1e-12);

      // Without the periodic wrap the columns see only the Z^d pattern.
      const LatticeSpec box(1, 3, Boundary::zero, {WeightKind::exponential, kappa, 2.0});
      const auto open = verify_hypotheses(build_discrete_laplacian(box, 0.0), box);
      CHECK(open.beta == doctest::Approx(2.0 + 2.0 * std::cosh(kappa)).epsilon(1e-12));
    }
  }
}

TEST_CASE("interaction range is enforced") {
  const auto lat = flat(1, 3);
  const std::vector<MatrixEntry> far{{0, 3, 1.0}};
  CHECK_THROWS_AS(InteractionOperator(lat, far, 1.0), ValidationError);
  CHECK_NOTHROW(InteractionOperator(lat, far, 3.0));
}

TEST_CASE("check_dissipativity examples") {
  const auto cubic = check_dissipativity(Polynomial({0, 0, 0, -1}));
  CHECK(cubic.ok);
  CHECK(cubic.eta_min == doctest::Approx(0.0).epsilon(1e-9));

  const auto shifted = check_dissipativity(Polynomial({0, 1, 0, -1}));
  CHECK(shifted.ok);
  CHECK(shifted.eta_min == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_FALSE(check_dissipativity(Polynomial({0, 0, 0, 1})).ok);
}

TEST_CASE("adding c z to f0 moves eta_min by c") {
  for (double c : {-0.7, 0.25, 2.0}) {
    const auto base = check_dissipativity(Polynomial({0.3, -0.5, 0.2, -1}));
    const auto moved = check_dissipativity(Polynomial({0.3, -0.5 + c, 0.2, -1}));
    CHECK(moved.eta_min - base.eta_min == doctest::Approx(c).epsilon(1e-9));
  }
}

TEST_CASE("apply_drift examples") {
  const auto m = scalar_model(1.0, Polynomial({0, 0, 0, -1}));
  const std::vector<double> one{1.0};
  CHECK(apply_drift(one, m.interaction, m.drift)[0] == doctest::Approx(-2.0));
  const std::vector<double> zero{0.0};
  CHECK(apply_drift(zero, m.interaction, m.drift)[0] == 0.0);

  const auto lat = flat(1, 2);
  const auto a = build_discrete_laplacian(lat, 0.5);
  const DriftSpec none;
  const DriftSpec cubic(Polynomial({0, 0, 0, -1}), 0.0);
  std::vector<double> x{0.3, -1.2, 0.8, 2.0, -0.1};
  std::vector<double> x2(5);
  for (int i = 0; i < 5; ++i) x2[i] = 2.0 * x[i];
  const auto lin1 = apply_drift(x, a, none);
  const auto lin2 = apply_drift(x2, a, none);
  const auto full2 = apply_drift(x2, a, cubic);
  for (int i = 0; i < 5; ++i) {
    CHECK(lin2[i] == doctest::Approx(2.0 * lin1[i]).epsilon(1e-15));
    CHECK(full2[i] - lin2[i] == doctest::Approx(-x2[i] * x2[i] * x2[i]));
  }
}

TEST_CASE("apply_drift names the first non-finite site") {
  const auto lat = flat(1, 1);
  const auto a = build_discrete_laplacian(lat, 0.0);
  const DriftSpec none;
  const std::vector<double> bad{0.0, INFINITY, 0.0};
  try {
    (void)apply_drift(bad, a, none);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("site") != std::string::npos);
  }
}

TEST_CASE("model rates") {
  const auto m = scalar_model(2.0, Polynomial({0, 0.5, 0, -1}), 0.25);
  CHECK(m.drift.eta() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(m.dissipativity() == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(m.guaranteed_rate() == doctest::Approx(1.25).epsilon(1e-9));
}

TEST_CASE("polynomial derivatives") {
  const Polynomial p({1.0, -2.0, 0.5, 3.0});
  for (double x : {-1.5, 0.0, 0.7}) {
    CHECK(p(x) == doctest::Approx(1.0 - 2.0 * x + 0.5 * x * x + 3.0 * x * x * x));
    CHECK(p.derivative(x) == doctest::Approx(-2.0 + x + 9.0 * x * x));
    CHECK(p.second_derivative(x) == doctest::Approx(1.0 + 18.0 * x));
  }
  CHECK(Polynomial().degree() == -1);
}
