#include "spinfilter/functionals.hpp"

#include <limits>

#include "spinfilter/errors.hpp"

namespace spinfilter {

CylindricalFunction::CylindricalFunction(Shape shape, std::vector<double> direction, std::string name)
    : shape_(shape), direction_(std::move(direction)), name_(std::move(name)) {
  if (direction_.empty()) throw ConfigError("cylindrical function needs a direction");
  if (name_.empty()) name_ = shape_name(shape_);
}

CylindricalFunction CylindricalFunction::at_site(Shape shape, std::size_t site, std::size_t sites) {
  if (site >= sites) throw ConfigError("test function site outside the lattice");
  std::vector<double> e(sites, 0.0);
  e[site] = 1.0;
  std::string name = shape_name(shape);
  if (sites > 1) name += "@" + std::to_string(site);
  return CylindricalFunction(shape, std::move(e), std::move(name));
}

double CylindricalFunction::projection(std::span<const double> x) const {
  double u = 0.0;
  for (std::size_t i = 0; i < direction_.size(); ++i) u += direction_[i] * x[i];
  return u;
}

double CylindricalFunction::phi(double u) const {
  switch (shape_) {
    case Shape::constant: return 1.0;
    case Shape::identity: return u;
    case Shape::square: return u * u;
    case Shape::cube: return u * u * u;
    case Shape::tanh: return std::tanh(u);
    case Shape::cosine: return std::cos(u);
    case Shape::gaussian: return std::exp(-0.5 * u * u);
  }
  return 0.0;
}

double CylindricalFunction::phi_prime(double u) const {
  switch (shape_) {
    case Shape::constant: return 0.0;
    case Shape::identity: return 1.0;
    case Shape::square: return 2.0 * u;
    case Shape::cube: return 3.0 * u * u;
    case Shape::tanh: {
      const double t = std::tanh(u);
      return 1.0 - t * t;
    }
    case Shape::cosine: return -std::sin(u);
    case Shape::gaussian: return -u * std::exp(-0.5 * u * u);
  }
  return 0.0;
}

double CylindricalFunction::phi_second(double u) const {
  switch (shape_) {
    case Shape::constant: return 0.0;
    case Shape::identity: return 0.0;
    case Shape::square: return 2.0;
    case Shape::cube: return 6.0 * u;
    case Shape::tanh: {
      const double t = std::tanh(u);
      return -2.0 * t * (1.0 - t * t);
    }
    case Shape::cosine: return -std::cos(u);
    case Shape::gaussian: return (u * u - 1.0) * std::exp(-0.5 * u * u);
  }
  return 0.0;
}

double CylindricalFunction::lipschitz() const {
  double norm = 0.0;
  for (double v : direction_) norm += v * v;
  norm = std::sqrt(norm);
  switch (shape_) {
    case Shape::constant: return 0.0;
    case Shape::identity:
    case Shape::tanh:
    case Shape::cosine: return norm;
    case Shape::gaussian: return norm * std::exp(-0.5);
    case Shape::square:
    case Shape::cube: return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

bool CylindricalFunction::bounded() const {
  return shape_ == Shape::constant || shape_ == Shape::tanh || shape_ == Shape::cosine || shape_ == Shape::gaussian;
}

Shape parse_shape(const std::string& s) {
  if (s == "constant" || s == "one") return Shape::constant;
  if (s == "identity" || s == "x") return Shape::identity;
  if (s == "square" || s == "x2") return Shape::square;
  if (s == "cube" || s == "x3") return Shape::cube;
  if (s == "tanh") return Shape::tanh;
  if (s == "cos" || s == "cosine") return Shape::cosine;
  if (s == "gaussian") return Shape::gaussian;
  throw ConfigError("unknown test function shape '" + s + "'");
}

std::string shape_name(Shape s) {
  switch (s) {
    case Shape::constant: return "one";
    case Shape::identity: return "x";
    case Shape::square: return "x2";
    case Shape::cube: return "x3";
    case Shape::tanh: return "tanh";
    case Shape::cosine: return "cos";
    case Shape::gaussian: return "gaussian";
  }
  return "?";
}

}  // namespace spinfilter
