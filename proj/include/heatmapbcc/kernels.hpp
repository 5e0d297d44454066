#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/errors.hpp"

namespace heatmapbcc {

enum class KernelFamily { Matern32 };

/// Kernel parameters. gram() itself is unscaled (unit variance); the expected
/// inverse scale is carried along and applied downstream as K / E[varsigma],
/// with no hidden rescaling anywhere else.
struct KernelSpec {
  KernelFamily family = KernelFamily::Matern32;
  double length_scale = 20.0;
  double inverse_scale_expectation = 1.0;

  void validate() const {
    if (!(length_scale > 0.0) || !std::isfinite(length_scale))
      throw std::invalid_argument("KernelSpec: length_scale must be positive and finite");
    if (!(inverse_scale_expectation > 0.0) || !std::isfinite(inverse_scale_expectation))
      throw std::invalid_argument("KernelSpec: inverse scale expectation must be positive");
  }
};

/// Matern 3/2 correlation (1 + sqrt(3) d / l) exp(-sqrt(3) d / l).
inline double matern32(double d, double l) {
  if (!(d >= 0.0) || !std::isfinite(d))
    throw std::invalid_argument("matern32: distance must be finite and non-negative");
  if (!(l > 0.0) || !std::isfinite(l))
    throw std::invalid_argument("matern32: length scale must be positive and finite");
  constexpr double sqrt3 = 1.7320508075688772;
  const double s = sqrt3 * d / l;
  return (1.0 + s) * std::exp(-s);
}

/// Cross-covariance between two point sets (rows are points). Symmetric with
/// a unit diagonal when a and b are the same matrix.
inline Eigen::MatrixXd gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const KernelSpec& spec) {
  spec.validate();
  if (a.cols() != b.cols())
    throw std::invalid_argument("gram: point sets have different dimensionality");
  if (!a.allFinite() || !b.allFinite())
    throw std::invalid_argument("gram: points must be finite");
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j)
      k(i, j) = matern32((a.row(i) - b.row(j)).norm(), spec.length_scale);
  return k;
}

struct LengthScaleResult {
  double length_scale = 0.0;
  double objective = 0.0;
  int evaluations = 0;
};

/// Golden-section maximization of objective(l) over log length scale.
/// Non-finite objective values lose every comparison; if nothing finite is
/// seen the search fails. A constant objective yields the geometric midpoint.
inline LengthScaleResult optimize_length_scale(const std::function<double(double)>& objective,
                                               double l_min, double l_max,
                                               double log_tol = 1e-3) {
  if (!(l_min > 0.0) || !(l_max > l_min))
    throw std::invalid_argument("optimize_length_scale: need 0 < l_min < l_max");
  const double inv_phi = 0.6180339887498949;
  double lo = std::log(l_min), hi = std::log(l_max);
  LengthScaleResult res;
  bool any_finite = false;
  double vmin = 0.0, vmax = 0.0;
  const auto eval = [&](double t) {
    const double v = objective(std::exp(t));
    ++res.evaluations;
    if (std::isfinite(v)) {
      if (!any_finite) {
        vmin = vmax = v;
        any_finite = true;
      } else {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
      return v;
    }
    return -std::numeric_limits<double>::infinity();
  };

  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = eval(c), fd = eval(d);
  while (hi - lo > log_tol) {
    if (fc >= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = eval(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = eval(d);
    }
  }
  if (!any_finite)
    throw NumericalError("optimize_length_scale: objective non-finite on [" +
                         std::to_string(l_min) + ", " + std::to_string(l_max) + "]");
  if (vmin == vmax) {
    res.length_scale = std::exp(0.5 * (std::log(l_min) + std::log(l_max)));
    res.objective = vmax;
    return res;
  }
  res.length_scale = std::exp(0.5 * (lo + hi));
  res.objective = fc >= fd ? fc : fd;
  return res;
}

}  // namespace heatmapbcc
