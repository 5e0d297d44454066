#pragma once

#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/core.hpp"
#include "heatmapbcc/math.hpp"

namespace heatmapbcc {

/// Dirichlet posterior over one source's confusion matrix; row j is the
/// distribution over reported labels given true class j.
struct ConfusionFactor {
  Eigen::MatrixXd alpha0;  // J x L prior pseudo-counts
  Eigen::MatrixXd alpha;   // J x L posterior pseudo-counts

  Eigen::MatrixXd posterior_mean() const {
    return alpha.array().colwise() / alpha.rowwise().sum().array();
  }
};

namespace detail {

inline void check_responsibilities(const Eigen::MatrixXd& r, int n, int j) {
  if (r.rows() != n || r.cols() != j)
    throw std::invalid_argument("responsibilities must be N x J");
  if (!((r.array() >= 0.0).all() && r.allFinite()))
    throw std::invalid_argument("responsibilities must be finite and non-negative");
  for (int i = 0; i < r.rows(); ++i) {
    double s = 0.0;
    for (int c = 0; c < r.cols(); ++c) s += r(i, c);
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument("responsibility row " + std::to_string(i) +
                                  " does not sum to 1");
  }
}

}  // namespace detail

/// Posterior pseudo-counts alpha = alpha0 + sum_i r_{i,j} [label_i == l],
/// accumulated per source over its reports.
inline std::vector<ConfusionFactor> update_confusion(const std::vector<Eigen::MatrixXd>& alpha0,
                                                     const Eigen::MatrixXd& r,
                                                     const ReportSet& reports) {
  reports.validate();
  const int num_classes = static_cast<int>(r.cols());
  detail::check_responsibilities(r, reports.num_locations(), num_classes);
  if (static_cast<int>(alpha0.size()) != reports.num_sources)
    throw std::invalid_argument("update_confusion: one alpha0 per source required");
  std::vector<ConfusionFactor> out(alpha0.size());
  for (int s = 0; s < reports.num_sources; ++s) {
    const Eigen::MatrixXd& prior = alpha0[s];
    if (prior.rows() != num_classes || prior.cols() != reports.num_labels)
      throw std::invalid_argument("update_confusion: alpha0 must be J x L");
    if (!(prior.array() > 0.0).all())
      throw std::invalid_argument("update_confusion: alpha0 entries must be positive");
    out[s].alpha0 = prior;
    out[s].alpha = prior;
  }
  for (const Report& e : reports.entries) {
    Eigen::MatrixXd& alpha = out[e.source_id].alpha;
    for (int j = 0; j < num_classes; ++j) alpha(j, e.label - 1) += r(e.location, j);
  }
  return out;
}

/// E[log pi_{j,l}] = psi(alpha_{j,l}) - psi(sum_l alpha_{j,l}); every entry
/// is strictly negative.
inline Eigen::MatrixXd expected_log_confusion(const Eigen::MatrixXd& alpha) {
  if (!(alpha.array() > 0.0).all() || !alpha.allFinite())
    throw std::invalid_argument("expected_log_confusion: alpha entries must be positive");
  Eigen::MatrixXd e(alpha.rows(), alpha.cols());
  for (int j = 0; j < alpha.rows(); ++j) {
    const double row_psi = digamma(alpha.row(j).sum());
    for (int l = 0; l < alpha.cols(); ++l) e(j, l) = digamma(alpha(j, l)) - row_psi;
  }
  return e;
}

}  // namespace heatmapbcc
