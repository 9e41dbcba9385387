#include "spinfilter/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "spinfilter/errors.hpp"

namespace spinfilter {

// ---------------------------------------------------------------------------
// LatticeSpec

LatticeSpec::LatticeSpec(int dim, int radius, Boundary boundary, WeightSpec weight,
                         int growth_exponent)
    : dim_(dim), radius_(radius), boundary_(boundary), weight_(weight), growth_s_(growth_exponent) {
  if (dim < 1) throw ConfigError("lattice dimension d must be >= 1");
  if (radius < 0) throw ConfigError("lattice truncation radius N must be >= 0");
  if (growth_exponent < 1) throw ConfigError("growth exponent s must be >= 1");
  if (weight.kind != WeightKind::uniform && !(weight.kappa > 0.0)) {
    throw ConfigError("weight kappa must be > 0");
  }
  if (weight.kind == WeightKind::polynomial && !(weight.r > dim)) {
    throw ConfigError("polynomial weight requires r > d");
  }
  site_count_ = 1;
  for (int i = 0; i < dim; ++i) site_count_ *= static_cast<std::size_t>(side());

  weights_.resize(site_count_);
  for (std::size_t s = 0; s < site_count_; ++s) {
    const double k = site_norm(s);
    switch (weight.kind) {
      case WeightKind::uniform:
        weights_[s] = 1.0;
        break;
      case WeightKind::exponential:
        weights_[s] = std::exp(-weight.kappa * k);
        break;
      case WeightKind::polynomial:
        weights_[s] = 1.0 / (1.0 + weight.kappa * std::pow(k, weight.r));
        break;
    }
  }
}

std::vector<int> LatticeSpec::coords(std::size_t index) const {
  std::vector<int> c(static_cast<std::size_t>(dim_));
  const auto n = static_cast<std::size_t>(side());
  for (auto& ci : c) {
    ci = static_cast<int>(index % n) - radius_;
    index /= n;
  }
  return c;
}

std::size_t LatticeSpec::index(std::span<const int> c) const {
  if (c.size() != static_cast<std::size_t>(dim_)) throw ConfigError("coordinate rank mismatch");
  std::size_t idx = 0;
  std::size_t stride = 1;
  for (int ci : c) {
    if (ci < -radius_ || ci > radius_) throw ConfigError("coordinate outside the lattice box");
    idx += static_cast<std::size_t>(ci + radius_) * stride;
    stride *= static_cast<std::size_t>(side());
  }
  return idx;
}

std::optional<std::size_t> LatticeSpec::shifted(std::size_t idx, std::span<const int> offset) const {
  auto c = coords(idx);
  const int n = side();
  for (std::size_t i = 0; i < c.size(); ++i) {
    int v = c[i] + offset[i];
    if (v < -radius_ || v > radius_) {
      if (boundary_ == Boundary::zero) return std::nullopt;
      v = ((v + radius_) % n + n) % n - radius_;
    }
    c[i] = v;
  }
  return index(c);
}

double LatticeSpec::distance(std::size_t a, std::size_t b) const {
  const auto ca = coords(a);
  const auto cb = coords(b);
  const int n = side();
  double sq = 0.0;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    int diff = std::abs(ca[i] - cb[i]);
    if (boundary_ == Boundary::periodic) diff = std::min(diff, n - diff);
    sq += static_cast<double>(diff) * diff;
  }
  return std::sqrt(sq);
}

double LatticeSpec::site_norm(std::size_t idx) const {
  double sq = 0.0;
  for (int ci : coords(idx)) sq += static_cast<double>(ci) * ci;
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// InteractionOperator

InteractionOperator::InteractionOperator(const LatticeSpec& lattice, std::vector<MatrixEntry> entries,
                                         double declared_range)
    : range_(declared_range) {
  const std::size_t n = lattice.site_count();
  std::map<std::pair<std::size_t, std::size_t>, double> merged;
  for (const auto& e : entries) {
    if (e.row >= n || e.col >= n) throw ConfigError("interaction entry outside the lattice");
    if (!std::isfinite(e.value)) throw ConfigError("interaction entry is not finite");
    merged[{e.row, e.col}] += e.value;
  }
  row_start_.assign(n + 1, 0);
  for (const auto& [key, value] : merged) {
    if (value == 0.0) continue;
    const double dist = lattice.distance(key.first, key.second);
    if (dist > declared_range + 1e-12) {
      std::ostringstream msg;
      msg << "interaction entry (" << key.first << ", " << key.second << ") couples sites at distance "
          << dist << " beyond declared range " << declared_range;
      throw ValidationError(msg.str());
    }
    ++row_start_[key.first + 1];
    cols_.push_back(key.second);
    values_.push_back(value);
    magnitude_ = std::max(magnitude_, std::abs(value));
  }
  for (std::size_t i = 0; i < n; ++i) row_start_[i + 1] += row_start_[i];
}

void InteractionOperator::apply(std::span<const double> x, std::span<double> y) const {
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) acc += values_[k] * x[cols_[k]];
    y[i] = acc;
  }
}

double InteractionOperator::entry(std::size_t row, std::size_t col) const {
  const auto first = cols_.begin() + static_cast<std::ptrdiff_t>(row_start_[row]);
  const auto last = cols_.begin() + static_cast<std::ptrdiff_t>(row_start_[row + 1]);
  const auto it = std::lower_bound(first, last, col);
  if (it == last || *it != col) return 0.0;
  return values_[static_cast<std::size_t>(it - cols_.begin())];
}

bool InteractionOperator::is_diagonal() const {
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) {
      if (cols_[k] != i) return false;
    }
  }
  return true;
}

bool InteractionOperator::is_symmetric(double tol) const {
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) {
      if (std::abs(values_[k] - entry(cols_[k], i)) > tol) return false;
    }
  }
  return true;
}

std::vector<MatrixEntry> InteractionOperator::entries() const {
  std::vector<MatrixEntry> out;
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) out.push_back({i, cols_[k], values_[k]});
  }
  return out;
}

double InteractionOperator::max_abs_row_sum() const {
  double best = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    double s = 0.0;
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) s += std::abs(values_[k]);
    best = std::max(best, s);
  }
  return best;
}

double InteractionOperator::dissipativity_bound() const {
  double worst = -INFINITY;
  for (std::size_t i = 0; i < size(); ++i) {
    double centre = 0.0;
    double radius = 0.0;
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) {
      const std::size_t j = cols_[k];
      if (j == i) {
        centre = values_[k];
      } else {
        radius += 0.5 * std::abs(values_[k] + entry(j, i));
      }
    }
    // Entries present only in the transpose.
    for (std::size_t r = 0; r < size(); ++r) {
      if (r == i) continue;
      const double a_ri = entry(r, i);
      if (a_ri != 0.0 && entry(i, r) == 0.0) radius += 0.5 * std::abs(a_ri);
    }
    worst = std::max(worst, centre + radius);
  }
  return size() == 0 ? 0.0 : -worst;
}

std::vector<double> InteractionOperator::dense() const {
  const std::size_t n = size();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) m[i * n + cols_[k]] = values_[k];
  }
  return m;
}

InteractionOperator build_discrete_laplacian(const LatticeSpec& lattice, double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("laplacian alpha must be finite and >= 0");
  const int d = lattice.dim();
  std::vector<MatrixEntry> entries;
  std::vector<int> offset(static_cast<std::size_t>(d), 0);
  for (std::size_t s = 0; s < lattice.site_count(); ++s) {
    entries.push_back({s, s, -(2.0 * d + alpha)});
    for (int axis = 0; axis < d; ++axis) {
      for (int sign : {-1, 1}) {
        std::fill(offset.begin(), offset.end(), 0);
        offset[static_cast<std::size_t>(axis)] = sign;
        if (auto nb = lattice.shifted(s, offset)) entries.push_back({s, *nb, 1.0});
      }
    }
  }
  return InteractionOperator(lattice, std::move(entries), 1.0);
}

InteractionOperator build_stencil_operator(const LatticeSpec& lattice,
                                           std::span<const StencilTerm> stencil) {
  std::vector<MatrixEntry> entries;
  double range = 0.0;
  for (const auto& term : stencil) {
    if (term.offset.size() != static_cast<std::size_t>(lattice.dim())) {
      throw ConfigError("stencil offset rank does not match lattice dimension");
    }
    double sq = 0.0;
    for (int o : term.offset) sq += static_cast<double>(o) * o;
    range = std::max(range, std::sqrt(sq));
    for (std::size_t s = 0; s < lattice.site_count(); ++s) {
      if (auto nb = lattice.shifted(s, term.offset)) entries.push_back({s, *nb, term.value});
    }
  }
  return InteractionOperator(lattice, std::move(entries), range);
}

// ---------------------------------------------------------------------------
// Drift

Polynomial::Polynomial(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {
  while (!coeffs_.empty() && coeffs_.back() == 0.0) coeffs_.pop_back();
  for (double c : coeffs_) {
    if (!std::isfinite(c)) throw ConfigError("polynomial coefficient is not finite");
  }
}

double Polynomial::operator()(double x) const {
  double acc = 0.0;
  for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double Polynomial::derivative(double x) const {
  double acc = 0.0;
  for (std::size_t k = coeffs_.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * coeffs_[k];
  return acc;
}

double Polynomial::second_derivative(double x) const {
  double acc = 0.0;
  for (std::size_t k = coeffs_.size(); k-- > 2;) acc = acc * x + static_cast<double>(k * (k - 1)) * coeffs_[k];
  return acc;
}

DissipativityReport check_dissipativity(const Polynomial& f0, const DissipativityGrid& grid) {
  if (!(grid.step > 0.0) || !(grid.hi > grid.lo)) throw ConfigError("invalid dissipativity grid");
  DissipativityReport report;
  const auto n = static_cast<std::size_t>(std::floor((grid.hi - grid.lo) / grid.step + 1e-9));
  double best = -INFINITY;
  for (std::size_t i = 0; i <= n; ++i) {
    const double z = grid.lo + static_cast<double>(i) * grid.step;
    best = std::max(best, f0.derivative(z));
  }
  report.eta_min = best;
  if (f0.is_zero()) {
    report.ok = true;
    return report;
  }
  if (f0.degree() % 2 == 0) {
    report.reason = "f0 has even degree";
  } else if (f0.leading() > 0.0) {
    report.reason = "f0 has a positive leading coefficient";
  } else {
    report.ok = true;
  }
  return report;
}

DriftSpec::DriftSpec(Polynomial f0, double f1_c, const DissipativityGrid& grid)
    : f0_(std::move(f0)), f1_c_(f1_c) {
  if (!std::isfinite(f1_c)) throw ConfigError("f1 coefficient is not finite");
  const auto report = check_dissipativity(f0_, grid);
  eta_ = report.eta_min;
  dissipative_ = report.ok;
  growth_s_ = std::max(1, f0_.degree());
  const auto n = static_cast<std::size_t>(std::floor((grid.hi - grid.lo) / grid.step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) {
    const double z = grid.lo + static_cast<double>(i) * grid.step;
    c0_ = std::max(c0_, std::abs(f0_(z)) / (1.0 + std::pow(std::abs(z), growth_s_)));
  }
}

double DriftSpec::lipschitz_f1() const { return std::abs(f1_c_); }

// ---------------------------------------------------------------------------
// Noise and model

double NoiseSpec::diffusion(std::size_t site) const {
  const double bb = b(site);
  return bb * bb * (sigma1 * sigma1 + sigma2 * sigma2);
}

bool NoiseSpec::is_zero() const {
  if (sigma1 == 0.0 && sigma2 == 0.0) return true;
  return std::all_of(b_diag.begin(), b_diag.end(), [](double v) { return v == 0.0; });
}

void NoiseSpec::validate(std::size_t site_count, std::optional<std::size_t> channels) const {
  if (b_diag.size() != 1 && b_diag.size() != site_count) {
    throw ConfigError("noise b_diag must have one entry or one per site");
  }
  for (double v : b_diag) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("noise b_diag entries must be finite and >= 0");
  }
  if (!std::isfinite(sigma1) || !std::isfinite(sigma2)) throw ConfigError("sigma1/sigma2 must be finite");
  if (correlated() && channels && *channels != site_count) {
    throw ConfigError("correlated noise (sigma2 != 0) requires one observation channel per site");
  }
}

double Model::dissipativity() const { return interaction.dissipativity_bound() - drift.eta(); }

double Model::guaranteed_rate() const { return dissipativity() - drift.lipschitz_f1(); }

Model scalar_model(double alpha, Polynomial f0, double f1_c, double b, double sigma1, double sigma2) {
  LatticeSpec lattice(1, 0, Boundary::periodic, WeightSpec{WeightKind::uniform, 0.0, 2.0});
  InteractionOperator a(lattice, {{0, 0, -alpha}}, 0.0);
  return Model{lattice, std::move(a), DriftSpec(std::move(f0), f1_c), NoiseSpec{{b}, sigma1, sigma2}};
}

// ---------------------------------------------------------------------------

double weighted_norm(std::span<const double> x, const LatticeSpec& lattice, double p) {
  if (!(p >= 1.0)) throw ConfigError("weighted_norm requires p >= 1");
  if (x.size() != lattice.site_count()) throw ConfigError("state length does not match lattice");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += lattice.weight(i) * std::pow(std::abs(x[i]), p);
  return std::pow(acc, 1.0 / p);
}

HypothesisReport verify_hypotheses(const InteractionOperator& a, const LatticeSpec& lattice) {
  const std::size_t n = lattice.site_count();
  if (a.size() != n) throw ConfigError("operator size does not match lattice");
  HypothesisReport rep;
  rep.alpha = a.max_abs_row_sum();

  std::vector<double> column(n, 0.0);
  for (const auto& e : a.entries()) column[e.col] += std::abs(e.value) * lattice.weight(e.row);
  for (std::size_t j = 0; j < n; ++j) rep.beta = std::max(rep.beta, column[j] / lattice.weight(j));

  const double r = a.range();
  rep.weight_ratio_max = 1.0;
  for (std::size_t g = 0; g < n; ++g) {
    for (std::size_t j = 0; j < n; ++j) {
      if (lattice.distance(g, j) <= r + 1e-12) {
        rep.weight_ratio_max = std::max(rep.weight_ratio_max, lattice.weight(g) / lattice.weight(j));
      }
    }
  }
  const auto& w = lattice.weight_spec();
  switch (w.kind) {
    case WeightKind::uniform:
      rep.weight_ratio_bound = 1.0;
      break;
    case WeightKind::exponential:
      rep.weight_ratio_bound = std::exp(w.kappa * r);
      break;
    case WeightKind::polynomial:
      rep.weight_ratio_bound = rep.weight_ratio_max;
      break;
  }
  rep.norm_bound = std::sqrt(rep.alpha * rep.beta);
  rep.ok = std::isfinite(rep.alpha) && std::isfinite(rep.beta) &&
           rep.weight_ratio_max <= rep.weight_ratio_bound * (1.0 + 1e-12);
  return rep;
}

std::vector<double> apply_drift(std::span<const double> x, const InteractionOperator& a,
                                const DriftSpec& drift) {
  if (x.size() != a.size()) throw ConfigError("state length does not match operator");
  std::vector<double> out(x.size());
  a.apply(x, out);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] += drift(x[i]);
    if (!std::isfinite(out[i])) {
      throw NumericError("drift overflow at site " + std::to_string(i));
    }
  }
  return out;
}

}  // namespace spinfilter
