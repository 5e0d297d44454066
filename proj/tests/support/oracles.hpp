#pragma once

// Independent numerical oracles used only by tests: Gauss-Hermite quadrature
// built from the Jacobi-matrix eigendecomposition, Dirichlet-multinomial
// marginals, and a dense brute-force posterior for tiny binary models. These
// deliberately avoid the library's own integration and inference code paths.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace oracles {

struct GaussHermite {
  Eigen::VectorXd nodes;    // physicists' nodes (weight exp(-x^2))
  Eigen::VectorXd weights;  // sum to sqrt(pi)
};

/// Golub-Welsch construction from the Hermite three-term recurrence.
inline GaussHermite gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n >= 1");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(k / 2.0);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    gh.weights[i] = sqrt_pi * v0 * v0;
  }
  return gh;
}

/// E[g(X)] for X ~ N(mean, var) by Gauss-Hermite quadrature.
template <typename G>
double normal_expectation(double mean, double var, int n_nodes, G&& g) {
  const GaussHermite gh = gauss_hermite(n_nodes);
  const double scale = std::sqrt(2.0 * var);
  double total = 0.0;
  for (int i = 0; i < gh.nodes.size(); ++i)
    total += gh.weights[i] * g(mean + scale * gh.nodes[i]);
  return total / std::sqrt(M_PI);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log p(counts | alpha) for one Dirichlet-multinomial row.
inline double dirichlet_multinomial_log(const Eigen::VectorXd& counts,
                                        const Eigen::VectorXd& alpha) {
  if (counts.size() != alpha.size())
    throw std::invalid_argument("dirichlet_multinomial_log: size mismatch");
  double total = std::lgamma(alpha.sum()) - std::lgamma(alpha.sum() + counts.sum());
  for (int l = 0; l < alpha.size(); ++l)
    total += std::lgamma(alpha[l] + counts[l]) - std::lgamma(alpha[l]);
  return total;
}

inline double log_beta_pdf(double x, double a, double b) {
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log(1.0 - x) -
         (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

struct TinyReport {
  int location;  // 0-based
  int source;    // 0-based
  int label;     // 1-based, binary (1 or 2)
};

/// Exact posterior E[rho_2] at every training point of the tiny binary model:
///   f_j ~ N(0, K) independently for j = 1, 2;  rho_2 = sigmoid(f_2 - f_1);
///   t_i ~ Categorical(rho_i);  labels ~ source confusion rows with Dirichlet
///   priors alpha0 (confusions integrated out analytically per source).
/// Dense tensor quadrature over the 2N whitened latent dimensions.
inline Eigen::VectorXd brute_force_rho(const Eigen::MatrixXd& k,
                                       const std::vector<TinyReport>& reports,
                                       const std::vector<Eigen::MatrixXd>& alpha0,
                                       int nodes_per_dim) {
  const int n = static_cast<int>(k.rows());
  if (n < 1 || n > 3) throw std::invalid_argument("brute_force_rho: N must be 1..3");
  const int n_sources = static_cast<int>(alpha0.size());
  const Eigen::MatrixXd chol =
      Eigen::LLT<Eigen::MatrixXd>(k + 1e-10 * Eigen::MatrixXd::Identity(n, n)).matrixL();

  // Report-count marginal log m(t) per true-state configuration.
  const int n_configs = 1 << n;
  std::vector<double> log_m(n_configs, 0.0);
  for (int cfg = 0; cfg < n_configs; ++cfg) {
    for (int s = 0; s < n_sources; ++s) {
      Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(2, alpha0[s].cols());
      for (const TinyReport& rep : reports) {
        if (rep.source != s) continue;
        const int t = (cfg >> rep.location) & 1;  // 0 => state 1, 1 => state 2
        counts(t, rep.label - 1) += 1.0;
      }
      for (int j = 0; j < 2; ++j)
        log_m[cfg] += dirichlet_multinomial_log(counts.row(j).transpose(),
                                                alpha0[s].row(j).transpose());
    }
  }

  const GaussHermite gh = gauss_hermite(nodes_per_dim);
  const int dims = 2 * n;
  std::vector<int> index(dims, 0);
  std::vector<double> numer(n_configs * n, 0.0), denom(n_configs, 0.0);
  Eigen::VectorXd z(dims), f1(n), f2(n), rho(n);
  while (true) {
    double log_w = 0.0;
    for (int d = 0; d < dims; ++d) {
      z[d] = gh.nodes[index[d]];
      log_w += std::log(gh.weights[index[d]]);
    }
    // Whitened draw: first n dims are class 1, the rest class 2 (sqrt(2)
    // rescaling converts the exp(-x^2) weight to a standard normal).
    f1 = chol * (std::sqrt(2.0) * z.head(n));
    f2 = chol * (std::sqrt(2.0) * z.tail(n));
    for (int i = 0; i < n; ++i) rho[i] = sigmoid(f2[i] - f1[i]);
    const double w = std::exp(log_w);
    for (int cfg = 0; cfg < n_configs; ++cfg) {
      double like = 1.0;
      for (int i = 0; i < n; ++i) like *= ((cfg >> i) & 1) ? rho[i] : 1.0 - rho[i];
      denom[cfg] += w * like;
      for (int i = 0; i < n; ++i) numer[cfg * n + i] += w * like * rho[i];
    }
    int d = 0;
    while (d < dims && ++index[d] == nodes_per_dim) index[d++] = 0;
    if (d == dims) break;
  }

  double max_log_m = log_m[0];
  for (double v : log_m) max_log_m = std::max(max_log_m, v);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  for (int cfg = 0; cfg < n_configs; ++cfg) {
    const double m = std::exp(log_m[cfg] - max_log_m);
    total += m * denom[cfg];
    for (int i = 0; i < n; ++i) out[i] += m * numer[cfg * n + i];
  }
  return out / total;
}

}  // namespace oracles
