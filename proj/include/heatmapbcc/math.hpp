#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "heatmapbcc/errors.hpp"

namespace heatmapbcc {

/// Digamma by upward recurrence onto the asymptotic series.
/// Absolute error stays below 1e-12 for x >= 1e-3.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv2 = 1.0 / (x * x);
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return acc + std::log(x) - 0.5 / x - tail;
}

/// Numerically stable logistic sigmoid.
inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("logit: p must lie in (0, 1)");
  return std::log(p) - std::log1p(-p);
}

/// log(sum_i exp(v_i)) over the first n entries, in index order.
inline double log_sum_exp(const double* v, int n) {
  double m = v[0];
  for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

/// In-place softmax of one row (accepts strided views, e.g. matrix rows).
/// Throws if every entry is -inf.
inline void softmax_in_place(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
  const int n = static_cast<int>(row.size());
  double m = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) m = std::max(m, row[j]);
  if (!std::isfinite(m)) throw NumericalError("softmax: all logits are -inf");
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - m);
    s += row[j];
  }
  for (int j = 0; j < n; ++j) row[j] /= s;
}

/// KL(Gamma(a,b) || Gamma(a0,b0)) with b as the rate parameter.
inline double gamma_kl(double a, double b, double a0, double b0) {
  return (a - a0) * digamma(a) - std::lgamma(a) + std::lgamma(a0) +
         a0 * (std::log(b) - std::log(b0)) + a * (b0 - b) / b;
}

/// KL(Dirichlet(alpha) || Dirichlet(beta)) for one row of positive parameters.
inline double dirichlet_kl(const Eigen::RowVectorXd& alpha, const Eigen::RowVectorXd& beta) {
  const double asum = alpha.sum();
  double kl = std::lgamma(asum) - std::lgamma(beta.sum());
  const double psi_asum = digamma(asum);
  for (int l = 0; l < alpha.size(); ++l) {
    kl += std::lgamma(beta[l]) - std::lgamma(alpha[l]) +
          (alpha[l] - beta[l]) * (digamma(alpha[l]) - psi_asum);
  }
  return kl;
}

struct JitteredLlt {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

/// Cholesky with escalating diagonal jitter 1e-6, 1e-5, ..., 1e-2.
inline JitteredLlt cholesky_with_jitter(Eigen::MatrixXd m) {
  JitteredLlt out;
  for (double jitter = 1e-6; jitter <= 1e-2 * (1.0 + 1e-12); jitter *= 10.0) {
    m.diagonal().array() += (out.jitter == 0.0) ? jitter : jitter - out.jitter;
    out.jitter = jitter;
    out.llt.compute(m);
    if (out.llt.info() == Eigen::Success) return out;
  }
  throw NumericalError("cholesky_with_jitter: matrix of size " + std::to_string(m.rows()) +
                       " not positive definite even with jitter 1e-2");
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace heatmapbcc
