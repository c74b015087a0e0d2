#pragma once

// Smoothing kernels and bandwidth rules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>

#include "error.hpp"
#include "measure.hpp"

namespace mprecon {

// Product kernel K(u) = prod_a K1(u_a). For MMD the radial profile of the
// same family is used instead, with profile(0) = 1.
struct Kernel {
  enum class Family { Gaussian, Epanechnikov, Uniform };
  Family family = Family::Gaussian;
  std::optional<double> bandwidth;  // MMD only; KDE takes a BandwidthRule

  static Kernel gaussian(std::optional<double> bw = std::nullopt) { return {Family::Gaussian, bw}; }
  static Kernel epanechnikov(std::optional<double> bw = std::nullopt) { return {Family::Epanechnikov, bw}; }
  static Kernel uniform(std::optional<double> bw = std::nullopt) { return {Family::Uniform, bw}; }

  // Normalization constant of the 1-D factor.
  double normalization() const {
    switch (family) {
      case Family::Gaussian: return 1.0 / std::sqrt(2.0 * std::numbers::pi);
      case Family::Epanechnikov: return 0.75;
      case Family::Uniform: return 0.5;
    }
    return 0.0;
  }

  double density_1d(double u) const {
    switch (family) {
      case Family::Gaussian: return normalization() * std::exp(-0.5 * u * u);
      case Family::Epanechnikov: return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
      case Family::Uniform: return std::abs(u) <= 1.0 ? 0.5 : 0.0;
    }
    return 0.0;
  }

  double cdf_1d(double u) const {
    switch (family) {
      case Family::Gaussian: return detail::normal_cdf(u);
      case Family::Epanechnikov:
        if (u <= -1.0) return 0.0;
        if (u >= 1.0) return 1.0;
        return 0.5 + 0.75 * (u - u * u * u / 3.0);
      case Family::Uniform:
        if (u <= -1.0) return 0.0;
        if (u >= 1.0) return 1.0;
        return 0.5 * (u + 1.0);
    }
    return 0.0;
  }

  // Radius (in bandwidth units) outside which the kernel is treated as zero.
  double support_radius() const { return family == Family::Gaussian ? 10.0 : 1.0; }

  // Unnormalized radial profile used as a positive-definite similarity.
  double profile(double r) const {
    switch (family) {
      case Family::Gaussian: return std::exp(-0.5 * r * r);
      case Family::Epanechnikov: return r <= 1.0 ? 1.0 - r * r : 0.0;
      case Family::Uniform: return r <= 1.0 ? 1.0 : 0.0;
    }
    return 0.0;
  }

  std::string name() const {
    switch (family) {
      case Family::Gaussian: return "gaussian";
      case Family::Epanechnikov: return "epanechnikov";
      case Family::Uniform: return "uniform";
    }
    return "";
  }

  static Kernel from_name(const std::string& s) {
    if (s == "gaussian") return gaussian();
    if (s == "epanechnikov") return epanechnikov();
    if (s == "uniform") return uniform();
    throw InvalidArgument("kernel: unknown family '" + s + "'");
  }
};

// H_n = h (fixed) or c * n^(-alpha).
struct BandwidthRule {
  enum class Kind { Fixed, PowerLaw };
  Kind kind = Kind::PowerLaw;
  double h = 1.0;
  double c = 1.06;
  double alpha = 0.2;

  static BandwidthRule fixed(double h) { return {Kind::Fixed, h, 0.0, 0.0}; }
  static BandwidthRule power_law(double c, double alpha) { return {Kind::PowerLaw, 0.0, c, alpha}; }

  void validate() const {
    if (kind == Kind::Fixed) {
      detail::require(h > 0.0 && std::isfinite(h), "bandwidth: h must be > 0");
    } else {
      detail::require(c > 0.0 && std::isfinite(c), "bandwidth: c must be > 0");
      detail::require(alpha > 0.0 && alpha < 1.0, "bandwidth: alpha must lie in (0, 1)");
    }
  }

  double at(std::size_t n) const {
    validate();
    detail::require(n >= 1, "bandwidth: n must be >= 1");
    return kind == Kind::Fixed ? h : c * std::pow(static_cast<double>(n), -alpha);
  }
};

namespace detail {

// Cell masses of the 1-D factor K1((. - x) / h) / h along axis a.
inline AxisWindow kernel_axis_window(const GridSpec& g, std::size_t a, double x, double h, const Kernel& k) {
  if (k.family == Kernel::Family::Gaussian) return gaussian_axis_window(g, a, x, h);
  AxisWindow w;
  const double r = k.support_radius() * h;
  const double wa = g.width(a);
  const auto n = static_cast<double>(g.cells[a]);
  const double kLo = std::clamp(std::floor((x - r - g.lo[a]) / wa), 0.0, n);
  const double kHi = std::clamp(std::ceil((x + r - g.lo[a]) / wa), 0.0, n);
  if (kHi <= kLo) return w;
  w.first = static_cast<std::size_t>(kLo);
  const auto last = static_cast<std::size_t>(kHi);
  double prev = k.cdf_1d((g.edge(a, w.first) - x) / h);
  for (std::size_t c = w.first; c < last; ++c) {
    const double next = k.cdf_1d((g.edge(a, c + 1) - x) / h);
    w.mass.push_back(std::max(0.0, next - prev));
    prev = next;
  }
  return w;
}

}  // namespace detail
}  // namespace mprecon
