#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "infoqm/errors.hpp"

namespace infoqm {

enum class Boundary { Periodic, Truncated };

struct AxisSpec {
  std::size_t points = 0;
  double lower = 0.0;
  double upper = 1.0;
  Boundary boundary = Boundary::Periodic;
};

struct GridSpec {
  std::size_t particle_count = 1;
  std::size_t space_dim = 1;
  std::vector<AxisSpec> axes;

  void validate() const {
    if (particle_count == 0 || space_dim == 0)
      throw InvalidArgument("grid: particle_count and space_dim must be positive");
    if (axes.size() != particle_count * space_dim)
      throw InvalidArgument("grid: expected " + std::to_string(particle_count * space_dim) +
                            " axes, got " + std::to_string(axes.size()));
    for (std::size_t k = 0; k < axes.size(); ++k) {
      const auto& a = axes[k];
      if (a.points == 0) throw InvalidArgument("grid: axis " + std::to_string(k) + " has no points");
      if (!std::isfinite(a.lower) || !std::isfinite(a.upper) || !(a.upper > a.lower))
        throw InvalidArgument("grid: axis " + std::to_string(k) + " needs finite lower < upper");
      if (a.boundary == Boundary::Truncated && a.points < 4)
        throw InvalidArgument("grid: truncated axis " + std::to_string(k) + " needs >= 4 points");
      if (a.boundary == Boundary::Periodic && a.points < 3)
        throw InvalidArgument("grid: periodic axis " + std::to_string(k) + " needs >= 3 points");
    }
  }

  static GridSpec line(std::size_t points, double lower, double upper,
                       Boundary b = Boundary::Periodic) {
    return GridSpec{1, 1, {AxisSpec{points, lower, upper, b}}};
  }
};

class Grid {
 public:
  explicit Grid(GridSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const std::size_t n = spec_.axes.size();
    strides_.assign(n, 1);
    for (std::size_t k = n; k-- > 1;) strides_[k - 1] = strides_[k] * spec_.axes[k].points;
    size_ = strides_[0] * spec_.axes[0].points;
    volume_ = 1.0;
    for (std::size_t k = 0; k < n; ++k) volume_ *= spacing(k);
  }

  static std::shared_ptr<const Grid> make(GridSpec spec) {
    return std::make_shared<const Grid>(std::move(spec));
  }

  const GridSpec& spec() const { return spec_; }
  std::size_t dimension() const { return spec_.axes.size(); }
  std::size_t particle_count() const { return spec_.particle_count; }
  std::size_t space_dim() const { return spec_.space_dim; }
  std::size_t size() const { return size_; }
  std::size_t points(std::size_t axis) const { return spec_.axes[axis].points; }
  double lower(std::size_t axis) const { return spec_.axes[axis].lower; }
  double upper(std::size_t axis) const { return spec_.axes[axis].upper; }
  double length(std::size_t axis) const { return upper(axis) - lower(axis); }
  double spacing(std::size_t axis) const { return length(axis) / static_cast<double>(points(axis)); }
  Boundary boundary(std::size_t axis) const { return spec_.axes[axis].boundary; }
  bool periodic(std::size_t axis) const { return boundary(axis) == Boundary::Periodic; }
  bool all_periodic() const {
    for (std::size_t k = 0; k < dimension(); ++k)
      if (!periodic(k)) return false;
    return true;
  }
  bool any_truncated() const { return !all_periodic(); }
  std::size_t stride(std::size_t axis) const { return strides_[axis]; }
  double cell_volume() const { return volume_; }

  double coordinate(std::size_t axis, std::size_t j) const {
    return lower(axis) + static_cast<double>(j) * spacing(axis);
  }
  std::size_t axis_index(std::size_t site, std::size_t axis) const {
    return (site / strides_[axis]) % points(axis);
  }
  double site_coordinate(std::size_t site, std::size_t axis) const {
    return coordinate(axis, axis_index(site, axis));
  }
  std::vector<double> site_coordinates(std::size_t site) const {
    std::vector<double> x(dimension());
    for (std::size_t k = 0; k < dimension(); ++k) x[k] = site_coordinate(site, k);
    return x;
  }
  double min_spacing() const {
    double h = spacing(0);
    for (std::size_t k = 1; k < dimension(); ++k) h = std::min(h, spacing(k));
    return h;
  }

  bool same_shape(const Grid& o) const {
    if (dimension() != o.dimension() || particle_count() != o.particle_count()) return false;
    for (std::size_t k = 0; k < dimension(); ++k) {
      const auto &a = spec_.axes[k], &b = o.spec_.axes[k];
      if (a.points != b.points || a.lower != b.lower || a.upper != b.upper ||
          a.boundary != b.boundary)
        return false;
    }
    return true;
  }

 private:
  GridSpec spec_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
  double volume_ = 1.0;
};

using GridPtr = std::shared_ptr<const Grid>;

// Diagonal inverse-mass metric; axis a belongs to particle a / d.
class Metric {
 public:
  Metric(std::vector<double> masses, std::size_t space_dim)
      : masses_(std::move(masses)), space_dim_(space_dim) {
    if (masses_.empty() || space_dim_ == 0) throw InvalidArgument("metric: empty mass list");
    for (double m : masses_)
      if (!(m > 0.0) || !std::isfinite(m)) throw InvalidArgument("metric: masses must be positive");
  }

  static Metric uniform(double mass, std::size_t particles, std::size_t space_dim) {
    return Metric(std::vector<double>(particles, mass), space_dim);
  }
  static Metric for_grid(const Grid& g, double mass = 1.0) {
    return uniform(mass, g.particle_count(), g.space_dim());
  }

  std::size_t dimension() const { return masses_.size() * space_dim_; }
  std::size_t particle_count() const { return masses_.size(); }
  std::size_t space_dim() const { return space_dim_; }
  std::size_t particle_of(std::size_t axis) const { return axis / space_dim_; }
  double mass(std::size_t axis) const { return masses_[particle_of(axis)]; }
  double inverse_mass(std::size_t axis) const { return 1.0 / mass(axis); }
  const std::vector<double>& particle_masses() const { return masses_; }
  double min_mass() const {
    double m = masses_[0];
    for (double v : masses_) m = std::min(m, v);
    return m;
  }

  void check_grid(const Grid& g) const {
    if (g.particle_count() != particle_count() || g.space_dim() != space_dim_)
      throw InvalidArgument("metric does not match grid layout");
  }

 private:
  std::vector<double> masses_;
  std::size_t space_dim_;
};

class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(GridPtr grid, double fill = 0.0) : grid_(std::move(grid)) {
    values_.assign(grid_->size(), fill);
  }
  ScalarField(GridPtr grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->size())
      throw InvalidArgument("scalar field: value count does not match grid size");
  }

  template <class F>
  static ScalarField from_function(GridPtr grid, F&& f) {
    ScalarField out(grid);
    std::vector<double> x(grid->dimension());
    for (std::size_t s = 0; s < grid->size(); ++s) {
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = grid->site_coordinate(s, k);
      out.values_[s] = f(std::span<const double>(x));
    }
    return out;
  }

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double operator[](std::size_t s) const { return values_[s]; }
  double& operator[](std::size_t s) { return values_[s]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  double max() const {
    double m = -INFINITY;
    for (double v : values_) m = std::max(m, v);
    return m;
  }
  double min() const {
    double m = INFINITY;
    for (double v : values_) m = std::min(m, v);
    return m;
  }
  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  ScalarField& operator+=(const ScalarField& o) {
    for (std::size_t s = 0; s < size(); ++s) values_[s] += o.values_[s];
    return *this;
  }
  ScalarField& operator-=(const ScalarField& o) {
    for (std::size_t s = 0; s < size(); ++s) values_[s] -= o.values_[s];
    return *this;
  }
  ScalarField& operator*=(const ScalarField& o) {
    for (std::size_t s = 0; s < size(); ++s) values_[s] *= o.values_[s];
    return *this;
  }
  ScalarField& operator*=(double c) {
    for (double& v : values_) v *= c;
    return *this;
  }
  ScalarField& operator+=(double c) {
    for (double& v : values_) v += c;
    return *this;
  }

  template <class F>
  ScalarField map(F&& f) const {
    ScalarField out(grid_);
    for (std::size_t s = 0; s < size(); ++s) out.values_[s] = f(values_[s]);
    return out;
  }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

inline ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
inline ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
inline ScalarField operator*(ScalarField a, const ScalarField& b) { return a *= b; }
inline ScalarField operator*(ScalarField a, double c) { return a *= c; }
inline ScalarField operator*(double c, ScalarField a) { return a *= c; }

inline double linf_distance(const ScalarField& a, const ScalarField& b) {
  double m = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) m = std::max(m, std::abs(a[s] - b[s]));
  return m;
}

inline void require_finite(const ScalarField& f, const char* what) {
  for (std::size_t s = 0; s < f.size(); ++s)
    if (!std::isfinite(f[s]))
      throw NonFiniteValue(s, std::string(what) + ": non-finite value at site " + std::to_string(s));
}

inline double integrate(const ScalarField& f) {
  double sum = 0.0;
  for (std::size_t s = 0; s < f.size(); ++s) {
    if (!std::isfinite(f[s]))
      throw NonFiniteValue(s, "integrate: non-finite value at site " + std::to_string(s));
    sum += f[s];
  }
  return sum * f.grid().cell_volume();
}

// Options for difference operators. With wrap_period > 0 every neighbour
// difference on a periodic axis is reduced to (-period/2, period/2].
struct DiffOptions {
  double wrap_period = 0.0;
};

namespace detail {

inline double wrap_diff(double d, double period) {
  if (period <= 0.0) return d;
  return d - period * std::round(d / period);
}

// Calls fn(line_base, stride, n) for every line along `axis`.
template <class Fn>
void for_each_line(const Grid& g, std::size_t axis, Fn&& fn) {
  const std::size_t s = g.stride(axis), n = g.points(axis);
  const std::size_t block = s * n, outer = g.size() / block;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < s; ++in) fn(o * block + in, s, n);
}

}  // namespace detail

inline void check_axis(const Grid& g, std::size_t axis) {
  if (axis >= g.dimension())
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range (dimension " +
                          std::to_string(g.dimension()) + ")");
}

inline ScalarField gradient(const ScalarField& f, std::size_t axis, const DiffOptions& opt = {}) {
  const Grid& g = f.grid();
  check_axis(g, axis);
  require_finite(f, "gradient");
  ScalarField out(f.grid_ptr());
  const double h = g.spacing(axis);
  const bool per = g.periodic(axis);
  const double P = per ? opt.wrap_period : 0.0;
  const auto& v = f.values();
  auto& o = out.values();
  detail::for_each_line(g, axis, [&](std::size_t base, std::size_t s, std::size_t n) {
    auto at = [&](std::size_t j) { return v[base + j * s]; };
    auto d = [&](std::size_t j) { return detail::wrap_diff(at(j + 1) - at(j), P); };
    if (per) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t jp = (j + 1) % n, jm = (j + n - 1) % n;
        const double dp = detail::wrap_diff(at(jp) - at(j), P);
        const double dm = detail::wrap_diff(at(j) - at(jm), P);
        o[base + j * s] = (dp + dm) / (2.0 * h);
      }
    } else {
      for (std::size_t j = 1; j + 1 < n; ++j) o[base + j * s] = (d(j) + d(j - 1)) / (2.0 * h);
      o[base] = (3.0 * d(0) - d(1)) / (2.0 * h);
      o[base + (n - 1) * s] = (3.0 * d(n - 2) - d(n - 3)) / (2.0 * h);
    }
  });
  return out;
}

inline ScalarField second_derivative(const ScalarField& f, std::size_t axis_i, std::size_t axis_j,
                                     const DiffOptions& opt = {}) {
  const Grid& g = f.grid();
  check_axis(g, axis_i);
  check_axis(g, axis_j);
  if (axis_i != axis_j) {
    ScalarField inner = gradient(f, std::max(axis_i, axis_j), opt);
    return gradient(inner, std::min(axis_i, axis_j));
  }
  require_finite(f, "second_derivative");
  const std::size_t axis = axis_i;
  ScalarField out(f.grid_ptr());
  const double h = g.spacing(axis), h2 = h * h;
  const bool per = g.periodic(axis);
  const double P = per ? opt.wrap_period : 0.0;
  const auto& v = f.values();
  auto& o = out.values();
  detail::for_each_line(g, axis, [&](std::size_t base, std::size_t s, std::size_t n) {
    auto at = [&](std::size_t j) { return v[base + j * s]; };
    auto d = [&](std::size_t j) { return detail::wrap_diff(at(j + 1) - at(j), P); };
    if (per) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t jp = (j + 1) % n, jm = (j + n - 1) % n;
        const double dp = detail::wrap_diff(at(jp) - at(j), P);
        const double dm = detail::wrap_diff(at(j) - at(jm), P);
        o[base + j * s] = (dp - dm) / h2;
      }
    } else {
      for (std::size_t j = 1; j + 1 < n; ++j) o[base + j * s] = (d(j) - d(j - 1)) / h2;
      // (2f0 - 5f1 + 4f2 - f3)/h^2 written in differences
      o[base] = (-2.0 * d(0) + 3.0 * d(1) - d(2)) / h2;
      o[base + (n - 1) * s] = (2.0 * d(n - 2) - 3.0 * d(n - 3) + d(n - 4)) / h2;
    }
  });
  return out;
}

// g_ii d_i d_i f summed over axes.
inline ScalarField laplacian(const ScalarField& f, const Metric& m, const DiffOptions& opt = {}) {
  ScalarField out(f.grid_ptr());
  for (std::size_t k = 0; k < f.grid().dimension(); ++k) {
    out += second_derivative(f, k, k, opt) * m.inverse_mass(k);
  }
  return out;
}

}  // namespace infoqm
