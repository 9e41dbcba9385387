#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace spinfilter {

using TestFunction = std::function<double(std::span<const double>)>;

enum class Shape { constant, identity, square, cube, tanh, cosine, gaussian };

/// f(x) = phi(<e, x>) for a fixed direction e over the sites. Closed-form
/// first and second derivatives make generator terms exact.
class CylindricalFunction {
 public:
  CylindricalFunction(Shape shape, std::vector<double> direction, std::string name = {});

  /// phi(x_site) on a lattice of `sites` sites.
  static CylindricalFunction at_site(Shape shape, std::size_t site, std::size_t sites);

  [[nodiscard]] Shape shape() const { return shape_; }
  [[nodiscard]] const std::vector<double>& direction() const { return direction_; }
  [[nodiscard]] const std::string& name() const { return name_; }

  [[nodiscard]] double projection(std::span<const double> x) const;
  [[nodiscard]] double phi(double u) const;
  [[nodiscard]] double phi_prime(double u) const;
  [[nodiscard]] double phi_second(double u) const;

  [[nodiscard]] double operator()(std::span<const double> x) const { return phi(projection(x)); }

  /// Lipschitz constant of phi times |e|; infinite for unbounded growth.
  [[nodiscard]] double lipschitz() const;
  [[nodiscard]] bool bounded() const;

  [[nodiscard]] TestFunction as_function() const {
    return [self = *this](std::span<const double> x) { return self(x); };
  }

 private:
  Shape shape_;
  std::vector<double> direction_;
  std::string name_;
};

Shape parse_shape(const std::string& s);
std::string shape_name(Shape s);

}  // namespace spinfilter
