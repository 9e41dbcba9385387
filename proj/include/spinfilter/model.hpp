#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spinfilter {

enum class Boundary { periodic, zero };

enum class WeightKind {
  uniform,      ///< rho = 1 (plain l^p)
  exponential,  ///< rho(k) = exp(-kappa |k|)
  polynomial,   ///< rho(k) = 1 / (1 + kappa |k|^r), r > d
};

struct WeightSpec {
  WeightKind kind = WeightKind::exponential;
  double kappa = 1.0;
  double r = 2.0;
};

/// Truncated lattice box {-N..N}^d with a summable site weight.
///
/// Sites are numbered by the mixed-radix map
///   index = sum_i (c_i + N) (2N+1)^i,
/// so coordinate 0 varies fastest.
class LatticeSpec {
 public:
  LatticeSpec(int dim, int radius, Boundary boundary = Boundary::periodic,
              WeightSpec weight = {}, int growth_exponent = 1);

  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] int radius() const { return radius_; }
  [[nodiscard]] int side() const { return 2 * radius_ + 1; }
  [[nodiscard]] Boundary boundary() const { return boundary_; }
  [[nodiscard]] const WeightSpec& weight_spec() const { return weight_; }
  [[nodiscard]] int growth_exponent() const { return growth_s_; }
  [[nodiscard]] std::size_t site_count() const { return site_count_; }

  [[nodiscard]] std::vector<int> coords(std::size_t index) const;
  [[nodiscard]] std::size_t index(std::span<const int> coords) const;

  /// Site at `index + offset`; wraps for periodic boundaries, empty when the
  /// shifted site leaves the box under zero boundaries.
  [[nodiscard]] std::optional<std::size_t> shifted(std::size_t index,
                                                   std::span<const int> offset) const;

  /// Euclidean distance, minimum image under periodic boundaries.
  [[nodiscard]] double distance(std::size_t a, std::size_t b) const;

  /// |k| for the site's coordinate vector k.
  [[nodiscard]] double site_norm(std::size_t index) const;

  [[nodiscard]] double weight(std::size_t index) const { return weights_[index]; }
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }

 private:
  int dim_;
  int radius_;
  Boundary boundary_;
  WeightSpec weight_;
  int growth_s_;
  std::size_t site_count_;
  std::vector<double> weights_;
};

struct MatrixEntry {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Bounded-range interaction matrix a_{gamma j} on a truncated lattice, CSR.
class InteractionOperator {
 public:
  InteractionOperator() = default;

  /// Duplicate (row, col) pairs are summed. Throws ValidationError if a
  /// nonzero entry couples sites farther apart than `declared_range`.
  InteractionOperator(const LatticeSpec& lattice, std::vector<MatrixEntry> entries,
                      double declared_range);

  [[nodiscard]] std::size_t size() const { return row_start_.empty() ? 0 : row_start_.size() - 1; }
  [[nodiscard]] double range() const { return range_; }
  [[nodiscard]] double magnitude_bound() const { return magnitude_; }

  /// y = A x
  void apply(std::span<const double> x, std::span<double> y) const;

  [[nodiscard]] double entry(std::size_t row, std::size_t col) const;
  [[nodiscard]] double diagonal(std::size_t row) const { return entry(row, row); }
  [[nodiscard]] bool is_diagonal() const;
  [[nodiscard]] bool is_symmetric(double tol = 1e-14) const;
  [[nodiscard]] std::vector<MatrixEntry> entries() const;

  /// sup_gamma sum_j |a_{gamma j}|
  [[nodiscard]] double max_abs_row_sum() const;

  /// Gershgorin lower bound on eta with <Ax, x> <= -eta |x|^2.
  [[nodiscard]] double dissipativity_bound() const;

  /// Row-major dense copy (size x size).
  [[nodiscard]] std::vector<double> dense() const;

 private:
  std::vector<std::size_t> row_start_;
  std::vector<std::size_t> cols_;
  std::vector<double> values_;
  double range_ = 0.0;
  double magnitude_ = 0.0;
};

/// (Ax)_gamma = sum_{|j-gamma|_1 = 1} x_j - (2d + alpha) x_gamma
InteractionOperator build_discrete_laplacian(const LatticeSpec& lattice, double alpha);

/// Translation-invariant stencil: a_{gamma, gamma+offset} = value.
struct StencilTerm {
  std::vector<int> offset;
  double value;
};
InteractionOperator build_stencil_operator(const LatticeSpec& lattice,
                                           std::span<const StencilTerm> stencil);

/// Dense polynomial, coefficients in ascending powers.
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::vector<double> coeffs);

  [[nodiscard]] double operator()(double x) const;
  [[nodiscard]] double derivative(double x) const;
  [[nodiscard]] double second_derivative(double x) const;
  /// -1 for the zero polynomial.
  [[nodiscard]] int degree() const { return static_cast<int>(coeffs_.size()) - 1; }
  [[nodiscard]] double leading() const { return coeffs_.empty() ? 0.0 : coeffs_.back(); }
  [[nodiscard]] bool is_zero() const { return coeffs_.empty(); }
  [[nodiscard]] const std::vector<double>& coefficients() const { return coeffs_; }

 private:
  std::vector<double> coeffs_;
};

struct DissipativityGrid {
  double lo = -10.0;
  double hi = 10.0;
  double step = 1e-3;
};

struct DissipativityReport {
  /// Smallest eta with f0(z) - eta z non-increasing on the grid (max f0').
  double eta_min = 0.0;
  bool ok = false;
  std::string reason;
};

DissipativityReport check_dissipativity(const Polynomial& f0, const DissipativityGrid& grid = {});

/// Local nonlinearity f = f0 + f1 with f1(z) = c z.
class DriftSpec {
 public:
  DriftSpec() = default;
  DriftSpec(Polynomial f0, double f1_c, const DissipativityGrid& grid = {});

  [[nodiscard]] const Polynomial& f0() const { return f0_; }
  [[nodiscard]] double f1_c() const { return f1_c_; }
  [[nodiscard]] double lipschitz_f1() const;
  [[nodiscard]] double eta() const { return eta_; }
  [[nodiscard]] bool dissipative() const { return dissipative_; }
  [[nodiscard]] int growth_exponent() const { return growth_s_; }
  /// |f0(z)| <= c0 (1 + |z|^s) on the validation grid.
  [[nodiscard]] double growth_constant() const { return c0_; }

  [[nodiscard]] double operator()(double z) const { return f0_(z) + f1_c_ * z; }
  [[nodiscard]] double derivative(double z) const { return f0_.derivative(z) + f1_c_; }
  [[nodiscard]] double second_derivative(double z) const { return f0_.second_derivative(z); }
  [[nodiscard]] bool is_zero() const { return f0_.is_zero() && f1_c_ == 0.0; }

 private:
  Polynomial f0_;
  double f1_c_ = 0.0;
  double eta_ = 0.0;
  bool dissipative_ = true;
  int growth_s_ = 1;
  double c0_ = 0.0;
};

/// Additive signal noise at site gamma:
///   b_gamma (sigma1 dW_gamma + sigma2 dZ_gamma),
/// where Z is the observation noise. With sigma2 != 0 every site is paired
/// with the observation channel of the same index.
struct NoiseSpec {
  std::vector<double> b_diag;
  double sigma1 = 1.0;
  double sigma2 = 0.0;

  [[nodiscard]] bool correlated() const { return sigma2 != 0.0; }
  [[nodiscard]] double b(std::size_t site) const { return b_diag.size() == 1 ? b_diag[0] : b_diag[site]; }
  /// Diagonal of B*QB at a site (Q = I).
  [[nodiscard]] double diffusion(std::size_t site) const;
  [[nodiscard]] bool is_zero() const;
  void validate(std::size_t site_count, std::optional<std::size_t> channels = std::nullopt) const;
};

struct Model {
  LatticeSpec lattice;
  InteractionOperator interaction;
  DriftSpec drift;
  NoiseSpec noise;

  [[nodiscard]] std::size_t site_count() const { return lattice.site_count(); }
  /// Dissipation margin of A + f0 (Gershgorin bound on A minus eta_min of f0).
  [[nodiscard]] double dissipativity() const;
  /// Guaranteed exponential rate omega = dissipativity - Lip(f1).
  [[nodiscard]] double guaranteed_rate() const;
};

/// Single-site model with A = -alpha, drift f0 + c z and noise b.
Model scalar_model(double alpha, Polynomial f0 = {}, double f1_c = 0.0, double b = 1.0,
                   double sigma1 = 1.0, double sigma2 = 0.0);

/// (sum_gamma rho(gamma) |x_gamma|^p)^(1/p)
double weighted_norm(std::span<const double> x, const LatticeSpec& lattice, double p);

struct HypothesisReport {
  double alpha = 0.0;  ///< max absolute row sum
  double beta = 0.0;   ///< max_j sum_gamma |a_{gamma j}| rho(gamma) / rho(j)
  double weight_ratio_max = 0.0;
  double weight_ratio_bound = 0.0;  ///< exp(kappa R) for exponential weights
  double norm_bound = 0.0;          ///< sqrt(alpha beta) on l^2_rho
  bool ok = false;
};

HypothesisReport verify_hypotheses(const InteractionOperator& a, const LatticeSpec& lattice);

/// Ax + f(x), componentwise f. Throws NumericError naming the first
/// non-finite site.
std::vector<double> apply_drift(std::span<const double> x, const InteractionOperator& a,
                                const DriftSpec& drift);

}  // namespace spinfilter
