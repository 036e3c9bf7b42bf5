#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qmetro/error.hpp"

namespace qmetro {

/// Phases in radians. Length 1 (single phase) or 3 (three-arm device). The
/// same type carries control vectors.
using PhaseVector = Eigen::VectorXd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Maps x into [lo, lo + 2pi).
inline double wrap_phase(double x, double lo = -std::numbers::pi) {
  double y = std::fmod(x - lo, kTwoPi);
  if (y < 0) y += kTwoPi;
  if (y >= kTwoPi) y = 0.0;
  return lo + y;
}

/// Regular lattice [lo, hi]^D with n points per axis, endpoints included.
/// Flat index ordering is row-major: axis 0 varies slowest.
class ParameterGrid {
 public:
  ParameterGrid() = default;

  ParameterGrid(double lo, double hi, int n_per_axis, int dims)
      : lo_(lo), hi_(hi), n_(n_per_axis), dims_(dims) {
    if (n_per_axis < 2) {
      throw DegenerateGridError("grid needs at least 2 points per axis, got " +
                                std::to_string(n_per_axis));
    }
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw DegenerateGridError("grid interval must satisfy lo < hi");
    }
    if (dims != 1 && dims != 3) {
      throw DegenerateGridError("grid dimensionality must be 1 or 3, got " +
                                std::to_string(dims));
    }
    spacing_ = (hi - lo) / (n_per_axis - 1);
    size_ = 1;
    for (int a = 0; a < dims; ++a) size_ *= static_cast<std::size_t>(n_per_axis);
    double periods = kTwoPi / spacing_;
    int p = static_cast<int>(std::lround(periods));
    period_points_ =
        (std::abs(periods - p) < 1e-9 * periods && (n_ == p || n_ == p + 1)) ? p : 0;
  }

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  int n_per_axis() const noexcept { return n_; }
  int dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return size_; }
  double spacing() const noexcept { return spacing_; }
  /// Volume of one lattice cell, spacing^D.
  double cell_volume() const noexcept { return std::pow(spacing_, dims_); }

  /// True when the axis spans exactly one 2pi period (optionally with the
  /// duplicated endpoint), so lattice translations can wrap around.
  bool is_periodic() const noexcept { return period_points_ > 0; }
  int period_points() const noexcept { return period_points_; }

  double axis_value(int k) const noexcept { return lo_ + k * spacing_; }

  std::vector<int> unflatten(std::size_t flat) const {
    std::vector<int> idx(static_cast<std::size_t>(dims_));
    for (int a = dims_ - 1; a >= 0; --a) {
      idx[static_cast<std::size_t>(a)] = static_cast<int>(flat % static_cast<std::size_t>(n_));
      flat /= static_cast<std::size_t>(n_);
    }
    return idx;
  }

  std::size_t flatten(const std::vector<int>& idx) const {
    if (idx.size() != static_cast<std::size_t>(dims_)) {
      throw ShapeError("multi-index length does not match grid dimensionality");
    }
    std::size_t flat = 0;
    for (int k : idx) {
      if (k < 0 || k >= n_) throw ShapeError("multi-index component out of range");
      flat = flat * static_cast<std::size_t>(n_) + static_cast<std::size_t>(k);
    }
    return flat;
  }

  PhaseVector point(std::size_t flat) const {
    PhaseVector x(dims_);
    auto idx = unflatten(flat);
    for (int a = 0; a < dims_; ++a) x[a] = axis_value(idx[static_cast<std::size_t>(a)]);
    return x;
  }

  /// size() x dims() matrix of lattice coordinates.
  Eigen::MatrixXd positions() const {
    Eigen::MatrixXd pos(static_cast<Eigen::Index>(size_), dims_);
    for (std::size_t j = 0; j < size_; ++j) {
      pos.row(static_cast<Eigen::Index>(j)) = point(j).transpose();
    }
    return pos;
  }

  /// Reduces an axis index onto [0, period_points). Requires a periodic grid.
  int wrap_axis_index(int k) const noexcept {
    int p = period_points_;
    int r = k % p;
    return r < 0 ? r + p : r;
  }

  /// Nearest lattice point. Periodic grids wrap, others clamp to the edge.
  std::size_t nearest_index(const PhaseVector& x) const {
    if (x.size() != dims_) throw ShapeError("phase vector length does not match grid");
    std::vector<int> idx(static_cast<std::size_t>(dims_));
    for (int a = 0; a < dims_; ++a) {
      double v = x[a];
      if (is_periodic()) v = wrap_phase(v, lo_);
      int k = static_cast<int>(std::lround((v - lo_) / spacing_));
      if (is_periodic()) {
        k = wrap_axis_index(k);
      } else {
        k = std::clamp(k, 0, n_ - 1);
      }
      idx[static_cast<std::size_t>(a)] = k;
    }
    return flatten(idx);
  }

  nlohmann::json to_json() const {
    return {{"lo", lo_}, {"hi", hi_}, {"n_per_axis", n_}, {"dims", dims_}};
  }

  static ParameterGrid from_json(const nlohmann::json& j) {
    return ParameterGrid(j.at("lo").get<double>(), j.at("hi").get<double>(),
                         j.at("n_per_axis").get<int>(), j.at("dims").get<int>());
  }

  friend bool operator==(const ParameterGrid& a, const ParameterGrid& b) {
    return a.lo_ == b.lo_ && a.hi_ == b.hi_ && a.n_ == b.n_ && a.dims_ == b.dims_;
  }

 private:
  double lo_ = 0.0;
  double hi_ = 1.0;
  int n_ = 2;
  int dims_ = 1;
  double spacing_ = 1.0;
  std::size_t size_ = 2;
  int period_points_ = 0;
};

inline ParameterGrid build_grid(double lo, double hi, int n_per_axis, int dims) {
  return ParameterGrid(lo, hi, n_per_axis, dims);
}

/// Cubic sub-lattice of a parent grid: the parent points whose every
/// coordinate lies in [box_lo, box_hi]. `offset` is the parent axis index of
/// the first retained point (identical on every axis).
struct SubGrid {
  ParameterGrid parent;
  ParameterGrid grid;
  int offset = 0;

  std::size_t parent_index(std::size_t sub_flat) const {
    auto idx = grid.unflatten(sub_flat);
    for (int& k : idx) k += offset;
    return parent.flatten(idx);
  }
};

inline SubGrid restrict_grid(const ParameterGrid& parent, double box_lo, double box_hi) {
  const double tol = 1e-9 * parent.spacing();
  int first = -1;
  int last = -1;
  for (int k = 0; k < parent.n_per_axis(); ++k) {
    double v = parent.axis_value(k);
    if (v >= box_lo - tol && v <= box_hi + tol) {
      if (first < 0) first = k;
      last = k;
    }
  }
  if (first < 0 || last - first + 1 < 2) {
    throw DomainError("restriction box retains fewer than 2 points per axis");
  }
  SubGrid sub;
  sub.parent = parent;
  sub.offset = first;
  sub.grid = ParameterGrid(parent.axis_value(first), parent.axis_value(last), last - first + 1,
                           parent.dims());
  return sub;
}

}  // namespace qmetro
