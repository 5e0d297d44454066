#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/kernels.hpp"
#include "heatmapbcc/math.hpp"
#include "heatmapbcc/parallel.hpp"
#include "heatmapbcc/rng.hpp"

namespace heatmapbcc {

/// Beta marginal over one class's state probability, in pseudo-count form:
/// nu_j counts the class, nu_not_j counts everything else.
struct BetaNoiseParams {
  double nu_j = 1.0;
  double nu_not_j = 1.0;
};

/// Beta parameters whose mean and variance match the given moments.
/// Requires 0 < variance < mean (1 - mean).
inline BetaNoiseParams moment_match_beta(double mean, double variance) {
  if (!(mean > 0.0 && mean < 1.0))
    throw std::invalid_argument("moment_match_beta: mean must lie in (0, 1)");
  const double bound = mean * (1.0 - mean);
  if (!(variance > 0.0 && variance < bound))
    throw std::invalid_argument("moment_match_beta: variance must lie in (0, " +
                                std::to_string(bound) + ")");
  const double strength = bound / variance - 1.0;
  return {strength * mean, strength * (1.0 - mean)};
}

/// Posterior mean of rho after observing responsibility r:
/// (nu_j + r) / (nu_j + nu_not_j + 1).
inline double beta_posterior_mean(const BetaNoiseParams& prior, double r) {
  return (prior.nu_j + r) / (prior.nu_j + prior.nu_not_j + 1.0);
}

/// Expected observation variance v = E[rho] - E[rho^2] under the posterior
/// beta with counts (nu_j + r, nu_not_j + 1 - r); this is the Q diagonal.
inline double expected_obs_variance(const BetaNoiseParams& prior, double r) {
  if (!(r >= 0.0 && r <= 1.0))
    throw std::invalid_argument("expected_obs_variance: r must lie in [0, 1]");
  const double a = prior.nu_j + r;
  const double b = prior.nu_not_j + 1.0 - r;
  const double s = a + b;
  const double mean = a / s;
  const double second = mean * mean + a * b / (s * s * (s + 1.0));
  return mean - second;
}

namespace detail {

/// Classes ordered by (mean, sd); ties keep index order. Sampling in this
/// order, and averaging estimates within tied groups, makes Monte Carlo
/// softmax summaries invariant under class relabeling.
inline std::vector<int> class_slots(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  std::vector<int> order(mean.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (mean[a] != mean[b]) return mean[a] < mean[b];
    return sd[a] < sd[b];
  });
  return order;
}

inline void average_tied_groups(const std::vector<int>& order, const Eigen::VectorXd& mean,
                                const Eigen::VectorXd& sd, Eigen::VectorXd& acc) {
  const int n = static_cast<int>(order.size());
  for (int g = 0; g < n;) {
    int e = g + 1;
    while (e < n && mean[order[e]] == mean[order[g]] && sd[order[e]] == sd[order[g]]) ++e;
    if (e - g > 1) {
      double total = 0.0;
      for (int m = g; m < e; ++m) total += acc[order[m]];
      const double shared = total / (e - g);
      for (int m = g; m < e; ++m) acc[order[m]] = shared;
    }
    g = e;
  }
}

}  // namespace detail

struct SoftmaxMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

/// Monte Carlo mean and variance of softmax(f) with independent per-class
/// marginals f_j ~ N(mean_j, sd_j^2).
inline SoftmaxMoments softmax_moments_mc(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd,
                                         int n_samples, Rng& rng) {
  const int num_classes = static_cast<int>(mean.size());
  const std::vector<int> order = detail::class_slots(mean, sd);
  Eigen::VectorXd vals(num_classes), sums = Eigen::VectorXd::Zero(num_classes),
                  sums_sq = Eigen::VectorXd::Zero(num_classes);
  for (int k = 0; k < n_samples; ++k) {
    for (int j : order) vals[j] = mean[j] + sd[j] * rng.normal();
    double mx = vals[order[0]];
    for (int j : order) mx = std::max(mx, vals[j]);
    double denom = 0.0;
    for (int j : order) denom += std::exp(vals[j] - mx);
    for (int j = 0; j < num_classes; ++j) {
      const double p = std::exp(vals[j] - mx) / denom;
      sums[j] += p;
      sums_sq[j] += p * p;
    }
  }
  detail::average_tied_groups(order, mean, sd, sums);
  detail::average_tied_groups(order, mean, sd, sums_sq);
  SoftmaxMoments out;
  out.mean = sums / n_samples;
  out.var = (sums_sq / n_samples - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0);
  return out;
}

/// Monte Carlo E[log sum_j exp(f_j)] with the same slot-ordered draws.
inline double expected_log_sum_exp_mc(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd,
                                      int n_samples, Rng& rng) {
  const int num_classes = static_cast<int>(mean.size());
  const std::vector<int> order = detail::class_slots(mean, sd);
  Eigen::VectorXd vals(num_classes);
  double acc = 0.0;
  for (int k = 0; k < n_samples; ++k) {
    for (int j : order) vals[j] = mean[j] + sd[j] * rng.normal();
    double mx = vals[order[0]];
    for (int j : order) mx = std::max(mx, vals[j]);
    double denom = 0.0;
    for (int j : order) denom += std::exp(vals[j] - mx);
    acc += mx + std::log(denom);
  }
  return acc / n_samples;
}

/// Prior moments of rho at a point, per class, from the GP prior with
/// constant means and stationary unit-variance kernel scaled by 1/E[varsigma].
inline SoftmaxMoments prior_rho_moments(const Eigen::VectorXd& prior_mean,
                                        const Eigen::VectorXd& prior_var, int n_samples,
                                        std::uint64_t seed) {
  if (prior_mean.size() != prior_var.size() || !(prior_var.array() > 0.0).all())
    throw std::invalid_argument("prior_rho_moments: need matching sizes and positive variances");
  Rng rng(seed, "prior-rho");
  return softmax_moments_mc(prior_mean, prior_var.cwiseSqrt(), n_samples, rng);
}

/// Gaussian factor q(f_j) for one class at the training locations.
struct LatentFactor {
  Eigen::VectorXd mu;      // prior mean
  Eigen::VectorXd f_hat;   // posterior mean
  Eigen::VectorXd g_diag;  // softmax Jacobian diagonal at f_hat
  Eigen::VectorXd q_diag;  // expected observation variance
  Eigen::MatrixXd sigma;   // posterior covariance
};

struct EkfResult {
  Eigen::MatrixXd f_hat;             // N x J
  Eigen::MatrixXd g;                 // N x J diagonals
  Eigen::MatrixXd q;                 // N x J diagonals
  std::vector<Eigen::MatrixXd> w;    // per-class N x N Kalman gains
  int iterations = 0;
};

namespace detail {

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& f) {
  Eigen::MatrixXd s = f;
  for (int i = 0; i < s.rows(); ++i) softmax_in_place(s.row(i));
  return s;
}

inline Eigen::MatrixXd kalman_gain(const Eigen::MatrixXd& k_hat, const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& q) {
  // W = K G (G K G + Q)^-1 with diagonal G, Q.
  Eigen::MatrixXd gk = g.asDiagonal() * k_hat;
  Eigen::MatrixXd m = gk * g.asDiagonal();
  m.diagonal() += q;
  const JitteredLlt llt = cholesky_with_jitter(std::move(m));
  return llt.llt.solve(gk).transpose();
}

}  // namespace detail

/// Iterated EKF-style update of the latent factors, all classes jointly:
///   f_j <- mu_j + W_j (r_j - sigma(f)_j + G_j (f_j - mu_j)),
///   W_j = K_j G_j (G_j K_j G_j + Q_j)^-1.
/// The softmax estimate starts from the posterior beta means and is refreshed
/// from f after each pass. Each pass applies W_j to a single vector through the
/// Cholesky factor of (G K G + Q), never forming W_j; the full gains are
/// computed once at the converged f so the returned triple is self-consistent.
/// The fixed-point iteration is not a contraction when the prior is strong
/// relative to the observation noise, so steps are damped (halved) whenever
/// the update residual grows; the fixed point itself is unchanged and the
/// convergence test stays on the undamped residual.
inline EkfResult ekf_inner_loop(const Eigen::MatrixXd& mu,
                                const std::vector<Eigen::MatrixXd>& k_hat,
                                const Eigen::MatrixXd& r,
                                const std::vector<BetaNoiseParams>& nu0,
                                const Eigen::MatrixXd& f_init, double tol, int max_iter) {
  const int n = static_cast<int>(r.rows());
  const int num_classes = static_cast<int>(r.cols());
  if (mu.rows() != n || mu.cols() != num_classes || f_init.rows() != n ||
      f_init.cols() != num_classes || static_cast<int>(k_hat.size()) != num_classes ||
      static_cast<int>(nu0.size()) != num_classes)
    throw std::invalid_argument("ekf_inner_loop: inconsistent dimensions");

  EkfResult res;
  res.q.resize(n, num_classes);
  Eigen::MatrixXd s(n, num_classes);
  for (int j = 0; j < num_classes; ++j) {
    for (int i = 0; i < n; ++i) {
      s(i, j) = beta_posterior_mean(nu0[j], r(i, j));
      res.q(i, j) = expected_obs_variance(nu0[j], r(i, j));
    }
  }

  res.f_hat = f_init;
  res.w.assign(num_classes, Eigen::MatrixXd());
  Eigen::MatrixXd f_next(n, num_classes);
  double step = 1.0;
  double prev_delta = std::numeric_limits<double>::infinity();
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    double delta = 0.0;
    for (int j = 0; j < num_classes; ++j) {
      const Eigen::VectorXd g = (s.col(j).array() * (1.0 - s.col(j).array())).matrix();
      Eigen::MatrixXd gk = g.asDiagonal() * k_hat[j];
      Eigen::MatrixXd m = gk * g.asDiagonal();
      m.diagonal() += res.q.col(j);
      const JitteredLlt llt = cholesky_with_jitter(std::move(m));
      const Eigen::VectorXd v =
          r.col(j) - s.col(j) + g.cwiseProduct(res.f_hat.col(j) - mu.col(j));
      f_next.col(j) = mu.col(j) + gk.transpose() * llt.llt.solve(v);
      delta = std::max(delta, (f_next.col(j) - res.f_hat.col(j)).cwiseAbs().maxCoeff());
    }
    if (delta > prev_delta) step = std::max(0.125, 0.5 * step);
    prev_delta = delta;
    if (step == 1.0 || delta < tol)
      res.f_hat = f_next;
    else
      res.f_hat += step * (f_next - res.f_hat);
    if (!res.f_hat.allFinite())
      throw NumericalError("ekf_inner_loop: latent update produced non-finite values");
    s = detail::softmax_rows(res.f_hat);
    if (delta < tol) {
      ++res.iterations;
      break;
    }
  }
  res.g = (s.array() * (1.0 - s.array())).matrix();
  for (int j = 0; j < num_classes; ++j)
    res.w[j] = detail::kalman_gain(k_hat[j], res.g.col(j), res.q.col(j));
  return res;
}

/// Posterior covariance sigma = K - W G K, symmetrized.
inline Eigen::MatrixXd ekf_covariance(const Eigen::MatrixXd& k_hat, const Eigen::MatrixXd& w,
                                      const Eigen::VectorXd& g_diag) {
  Eigen::MatrixXd sigma = k_hat - w * (g_diag.asDiagonal() * k_hat);
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  return sigma;
}

/// Gamma factor over the kernel inverse scale varsigma (b is the rate).
struct InverseScaleFactor {
  double a = 1.0;
  double b = 1.0;

  double expectation() const { return a / b; }
  double expected_log() const { return digamma(a) - std::log(b); }
};

/// a = a0 + N/2,  b = b0 + tr(K^-1 (sigma + (f - mu)(f - mu)^T)) / 2,
/// with K the unscaled prior covariance.
inline InverseScaleFactor update_inverse_scale(double a0, double b0, const Eigen::VectorXd& f_hat,
                                               const Eigen::MatrixXd& sigma,
                                               const Eigen::VectorXd& mu,
                                               const JitteredLlt& k_llt) {
  const int n = static_cast<int>(f_hat.size());
  const Eigen::VectorXd d = f_hat - mu;
  const double trace_term = k_llt.llt.solve(sigma).trace();
  const double quad_term = d.dot(k_llt.llt.solve(d));
  InverseScaleFactor out;
  out.a = a0 + 0.5 * n;
  out.b = b0 + 0.5 * (trace_term + quad_term);
  if (!(out.b > 0.0) || !std::isfinite(out.b))
    throw NumericalError("update_inverse_scale: non-positive rate b");
  return out;
}

inline InverseScaleFactor update_inverse_scale(double a0, double b0, const Eigen::VectorXd& f_hat,
                                               const Eigen::MatrixXd& sigma,
                                               const Eigen::VectorXd& mu,
                                               const Eigen::MatrixXd& k) {
  return update_inverse_scale(a0, b0, f_hat, sigma, mu, cholesky_with_jitter(k));
}

struct LatentPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

/// Latent posterior at test points:
///   f* = mu* + W* (r - sigma(f) + G (f - mu)),  W* = K* G (G K G + Q)^-1,
///   var* = diag(K**) - diag(W* G K*^T).
/// Output points are processed in blocks of at most 2000; per-point results
/// are independent of the blocking.
inline LatentPrediction predict_latent(const Eigen::MatrixXd& train_points,
                                       const Eigen::MatrixXd& test_points, const KernelSpec& spec,
                                       const Eigen::VectorXd& g_diag, const Eigen::VectorXd& q_diag,
                                       const Eigen::VectorXd& f_hat, const Eigen::VectorXd& sigma_col,
                                       const Eigen::VectorXd& mu_train, double mu_test,
                                       const Eigen::VectorXd& r_col) {
  spec.validate();
  const int n = static_cast<int>(train_points.rows());
  const int n_test = static_cast<int>(test_points.rows());
  const double prior_var = 1.0 / spec.inverse_scale_expectation;

  LatentPrediction out;
  out.mean = Eigen::VectorXd::Constant(n_test, mu_test);
  out.var = Eigen::VectorXd::Constant(n_test, prior_var);
  if (n == 0) return out;

  Eigen::MatrixXd m = g_diag.asDiagonal() * gram(train_points, train_points, spec) /
                      spec.inverse_scale_expectation * g_diag.asDiagonal();
  m.diagonal() += q_diag;
  const JitteredLlt llt = cholesky_with_jitter(std::move(m));
  const Eigen::VectorXd innovation =
      r_col - sigma_col + g_diag.cwiseProduct(f_hat - mu_train);

  constexpr int block = 2000;
  for (int start = 0; start < n_test; start += block) {
    const int len = std::min(block, n_test - start);
    const Eigen::MatrixXd k_star =
        gram(test_points.middleRows(start, len), train_points, spec) /
        spec.inverse_scale_expectation;
    const Eigen::MatrixXd gk = k_star * g_diag.asDiagonal();  // rows scale by g per column
    const Eigen::MatrixXd w_star = llt.llt.solve(gk.transpose()).transpose();
    out.mean.segment(start, len) += w_star * innovation;
    out.var.segment(start, len) -= (w_star.array() * gk.array()).rowwise().sum().matrix();
  }
  out.var = out.var.cwiseMax(1e-12);
  return out;
}

/// E[softmax(f*)] at each output point by sampling the independent per-point
/// marginals. Streams are keyed by global point index (point_offset + i), so
/// results are reproducible under any blocking or thread count.
inline Eigen::MatrixXd sample_state_probs(const Eigen::MatrixXd& f_star,
                                          const Eigen::MatrixXd& var_star, int n_samples,
                                          std::uint64_t seed, std::int64_t point_offset = 0) {
  if (f_star.rows() != var_star.rows() || f_star.cols() != var_star.cols())
    throw std::invalid_argument("sample_state_probs: shape mismatch");
  if (n_samples < 1) throw std::invalid_argument("sample_state_probs: n_samples >= 1");
  Eigen::MatrixXd probs(f_star.rows(), f_star.cols());
  parallel_for(static_cast<int>(f_star.rows()), [&](int i) {
    Rng rng(seed, "state-probs", static_cast<std::uint64_t>(point_offset + i));
    const Eigen::VectorXd sd = var_star.row(i).transpose().cwiseMax(0.0).cwiseSqrt();
    probs.row(i) =
        softmax_moments_mc(f_star.row(i).transpose(), sd, n_samples, rng).mean.transpose();
  });
  return probs;
}

}  // namespace heatmapbcc
