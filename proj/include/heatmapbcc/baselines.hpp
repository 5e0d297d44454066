#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/confusion.hpp"
#include "heatmapbcc/core.hpp"
#include "heatmapbcc/gpc.hpp"
#include "heatmapbcc/kernels.hpp"
#include "heatmapbcc/math.hpp"
#include "heatmapbcc/model.hpp"

namespace heatmapbcc {

// ---------------------------------------------------------------------------
// Independent Bayesian classifier combination (no spatial coupling): class
// proportions get a Dirichlet factor instead of the location-specific GP.
// ---------------------------------------------------------------------------

struct IbccState {
  ModelConfig config;
  ReportSet reports;
  Eigen::MatrixXd responsibilities;        // N x J
  std::vector<ConfusionFactor> confusion;  // per source
  Eigen::VectorXd kappa_params;            // Dirichlet over class proportions
  bool converged = false;
  int iterations = 0;

  Eigen::VectorXd kappa_mean() const { return kappa_params / kappa_params.sum(); }
};

inline IbccState ibcc_fit(const ReportSet& reports_in, const ModelConfig& config,
                          double r_tol = 1e-5) {
  config.validate();
  reports_in.validate();
  if (reports_in.num_labels > config.labels())
    throw std::invalid_argument("ibcc_fit: reports carry labels beyond the configured label space");
  ReportSet reports = reports_in;
  reports.num_labels = config.labels();
  const int n = reports.num_locations();
  const int num_classes = config.num_classes;
  const int num_sources = reports.num_sources;

  std::vector<Eigen::MatrixXd> alpha0(num_sources);
  for (int s = 0; s < num_sources; ++s) alpha0[s] = config.alpha0_for(s, num_sources);
  const Eigen::VectorXd nu0 = config.resolved_nu0();

  IbccState state;
  state.config = config;
  state.reports = reports;
  state.kappa_params = nu0;
  state.confusion.resize(num_sources);
  for (int s = 0; s < num_sources; ++s) state.confusion[s] = {alpha0[s], alpha0[s]};
  state.responsibilities = Eigen::MatrixXd::Constant(n, num_classes, 1.0 / num_classes);
  if (n == 0) {
    state.converged = true;
    return state;
  }

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    Eigen::RowVectorXd e_log_kappa(num_classes);
    const double psi_total = digamma(state.kappa_params.sum());
    for (int j = 0; j < num_classes; ++j)
      e_log_kappa[j] = digamma(state.kappa_params[j]) - psi_total;
    std::vector<Eigen::MatrixXd> e_log_pi(num_sources);
    for (int s = 0; s < num_sources; ++s)
      e_log_pi[s] = expected_log_confusion(state.confusion[s].alpha);

    Eigen::MatrixXd logits(n, num_classes);
    logits.rowwise() = e_log_kappa;
    for (const Report& e : reports.entries)
      for (int j = 0; j < num_classes; ++j)
        logits(e.location, j) += e_log_pi[e.source_id](j, e.label - 1);
    for (int i = 0; i < n; ++i) softmax_in_place(logits.row(i));

    const double delta =
        iter == 1 ? std::numeric_limits<double>::infinity()
                  : (logits - state.responsibilities).cwiseAbs().maxCoeff();
    state.responsibilities = std::move(logits);
    state.confusion = update_confusion(alpha0, state.responsibilities, reports);
    state.kappa_params = nu0 + state.responsibilities.colwise().sum().transpose();
    state.iterations = iter;
    if (iter >= 3 && delta < r_tol) {
      state.converged = true;
      break;
    }
  }
  return state;
}

/// Grid read-out for a model with no spatial coupling: the model performs no
/// interpolation between spatial points, so a cell shows a training
/// location's posterior only when that location coincides with the cell
/// center (the same latent target); every other cell falls back to E[kappa].
/// Coincidence is an identity test with a tiny tolerance so that coordinates
/// which round-tripped through text parsing still match — it is not a
/// distance weighting.
inline Eigen::MatrixXd ibcc_predict_grid(const IbccState& state, const GridSpec& grid) {
  grid.validate();
  const int num_classes = state.config.num_classes;
  const int cells = grid.num_cells();
  Eigen::MatrixXd out(cells, num_classes);
  out.rowwise() = state.kappa_mean().transpose().eval();
  if (state.reports.num_locations() == 0) return out;
  if (state.reports.locations.cols() != 2)
    throw std::invalid_argument("ibcc_predict_grid: needs 2-D training locations");
  const double tol = 1e-9 * std::max(grid.cell_dx, grid.cell_dy);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(cells);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(cells, num_classes);
  for (int i = 0; i < state.reports.num_locations(); ++i) {
    const double x = state.reports.locations(i, 0);
    const double y = state.reports.locations(i, 1);
    const int cell = grid.cell_index(x, y);
    if (cell < 0) continue;
    const Eigen::Vector2d c = grid.center(cell % grid.width, cell / grid.width);
    if (std::abs(x - c.x()) > tol || std::abs(y - c.y()) > tol) continue;
    count[cell] += 1.0;
    sum.row(cell) += state.responsibilities.row(i);
  }
  for (int c = 0; c < cells; ++c)
    if (count[c] > 0.0) out.row(c) = sum.row(c) / count[c];
  return out;
}

// ---------------------------------------------------------------------------
// Kernel density estimate of the event rate with a plus-one/plus-two smoothed
// ratio of weighted label masses.
// ---------------------------------------------------------------------------

inline Eigen::VectorXd kde_predict(const ReportSet& reports, const GridSpec& grid,
                                   double bandwidth, int event_label = 2) {
  grid.validate();
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_predict: bandwidth must be positive");
  const Eigen::MatrixXd centers = grid_points(grid);
  Eigen::VectorXd out(centers.rows());
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  for (int c = 0; c < centers.rows(); ++c) {
    double pos = 0.0, total = 0.0;
    for (const Report& e : reports.entries) {
      const double d2 =
          (reports.locations.row(e.location) - centers.row(c)).squaredNorm();
      const double w = std::exp(-d2 * inv);
      total += w;
      if (e.label == event_label) pos += w;
    }
    out[c] = (pos + 1.0) / (total + 2.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GP classifier driven by fixed soft labels (no confusion matrices). Used
// directly with per-location label frequencies ("GP only") and downstream of
// an IBCC fit ("IBCC then GP").
// ---------------------------------------------------------------------------

struct SoftGpState {
  ModelConfig config;
  Eigen::MatrixXd locations;  // N x D
  Eigen::MatrixXd soft_labels;
  std::vector<LatentFactor> latent;
  std::vector<InverseScaleFactor> inv_scale;
  std::vector<BetaNoiseParams> noise_prior;
  bool converged = false;
  int sweeps = 0;
};

inline SoftGpState soft_gp_fit(const Eigen::MatrixXd& locations, const Eigen::MatrixXd& soft,
                               const ModelConfig& config, const FitOptions& opt = {},
                               double f_tol = 1e-3, int max_sweeps = 50) {
  config.validate();
  const int n = static_cast<int>(locations.rows());
  const int num_classes = config.num_classes;
  if (soft.rows() != n || soft.cols() != num_classes)
    throw std::invalid_argument("soft_gp_fit: soft labels must be N x J");

  SoftGpState state;
  state.config = config;
  state.locations = locations;
  state.soft_labels = soft;
  const Eigen::VectorXd mean_j = config.resolved_prior_mean();
  const Eigen::VectorXd prior_var =
      Eigen::VectorXd::Constant(num_classes, config.b0 / config.a0);
  const SoftmaxMoments prior_moments =
      prior_rho_moments(mean_j, prior_var, opt.noise_match_samples, config.rng_seed);
  state.noise_prior.resize(num_classes);
  for (int j = 0; j < num_classes; ++j)
    state.noise_prior[j] = moment_match_beta(prior_moments.mean[j], prior_moments.var[j]);
  state.inv_scale.assign(num_classes, InverseScaleFactor{config.a0, config.b0});
  if (n == 0) {
    state.converged = true;
    return state;
  }
  detail::check_responsibilities(soft, n, num_classes);

  KernelSpec spec{KernelFamily::Matern32, config.length_scale, 1.0};
  const Eigen::MatrixXd k = gram(locations, locations, spec);
  const JitteredLlt k_llt = cholesky_with_jitter(k);
  Eigen::MatrixXd mu(n, num_classes);
  for (int j = 0; j < num_classes; ++j) mu.col(j).setConstant(mean_j[j]);

  Eigen::MatrixXd f_hat = mu;
  EkfResult ekf;
  std::vector<Eigen::MatrixXd> sigma(num_classes);
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    std::vector<Eigen::MatrixXd> k_hat(num_classes);
    for (int j = 0; j < num_classes; ++j) k_hat[j] = k / state.inv_scale[j].expectation();
    ekf = ekf_inner_loop(mu, k_hat, soft, state.noise_prior, f_hat, opt.inner_tol,
                         opt.inner_max_iter);
    const double delta = (ekf.f_hat - f_hat).cwiseAbs().maxCoeff();
    f_hat = ekf.f_hat;
    for (int j = 0; j < num_classes; ++j) {
      sigma[j] = ekf_covariance(k_hat[j], ekf.w[j], ekf.g.col(j));
      state.inv_scale[j] =
          update_inverse_scale(config.a0, config.b0, f_hat.col(j), sigma[j], mu.col(j), k_llt);
    }
    state.sweeps = sweep;
    if (sweep >= 2 && delta < f_tol) {
      state.converged = true;
      break;
    }
  }
  state.latent.resize(num_classes);
  for (int j = 0; j < num_classes; ++j)
    state.latent[j] = LatentFactor{mu.col(j), f_hat.col(j), ekf.g.col(j), ekf.q.col(j), sigma[j]};
  return state;
}

inline HeatmapGrid soft_gp_predict(const SoftGpState& state, const GridSpec& grid,
                                   int n_samples = 2000,
                                   std::optional<std::uint64_t> seed = {}) {
  grid.validate();
  if (n_samples < 1) throw std::invalid_argument("soft_gp_predict: n_samples >= 1");
  const int num_classes = state.config.num_classes;
  const Eigen::MatrixXd test = grid_points(grid);
  const Eigen::VectorXd mean_j = state.config.resolved_prior_mean();
  const std::uint64_t sample_seed = seed.value_or(state.config.rng_seed);

  HeatmapGrid out;
  out.grid = grid;
  out.latent_mean.resize(test.rows(), num_classes);
  out.latent_var.resize(test.rows(), num_classes);
  const int n = static_cast<int>(state.locations.rows());
  if (n == 0) {
    for (int j = 0; j < num_classes; ++j) {
      out.latent_mean.col(j).setConstant(mean_j[j]);
      out.latent_var.col(j).setConstant(state.config.b0 / state.config.a0);
    }
  } else {
    if (state.locations.cols() != 2)
      throw std::invalid_argument("soft_gp_predict: needs 2-D training locations");
    Eigen::MatrixXd f_train(n, num_classes);
    for (int j = 0; j < num_classes; ++j) f_train.col(j) = state.latent[j].f_hat;
    const Eigen::MatrixXd s_train = detail::softmax_rows(f_train);
    for (int j = 0; j < num_classes; ++j) {
      KernelSpec spec{KernelFamily::Matern32, state.config.length_scale,
                      state.inv_scale[j].expectation()};
      const LatentPrediction lp = predict_latent(
          state.locations, test, spec, state.latent[j].g_diag, state.latent[j].q_diag,
          state.latent[j].f_hat, s_train.col(j), state.latent[j].mu, mean_j[j],
          state.soft_labels.col(j));
      out.latent_mean.col(j) = lp.mean;
      out.latent_var.col(j) = lp.var;
    }
  }
  out.rho_mean = sample_state_probs(out.latent_mean, out.latent_var, n_samples, sample_seed);
  Eigen::MatrixXd logits = out.latent_mean;
  for (int i = 0; i < logits.rows(); ++i) softmax_in_place(logits.row(i));
  out.state_probs = std::move(logits);
  return out;
}

/// Per-location frequencies of the first `num_classes` label values;
/// locations whose reports all fall outside that range stay uniform.
inline Eigen::MatrixXd label_frequencies(const ReportSet& reports, int num_classes) {
  const int n = reports.num_locations();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, num_classes);
  for (const Report& e : reports.entries)
    if (e.label <= num_classes) counts(e.location, e.label - 1) += 1.0;
  Eigen::MatrixXd freq(n, num_classes);
  for (int i = 0; i < n; ++i) {
    const double total = counts.row(i).sum();
    if (total > 0.0)
      freq.row(i) = counts.row(i) / total;
    else
      freq.row(i).setConstant(1.0 / num_classes);
  }
  return freq;
}

inline SoftGpState gp_only_fit(const ReportSet& reports, const ModelConfig& config,
                               const FitOptions& opt = {}) {
  return soft_gp_fit(reports.locations, label_frequencies(reports, config.num_classes), config,
                     opt);
}

inline SoftGpState ibcc_gp_fit(const ReportSet& reports, const ModelConfig& config,
                               const FitOptions& opt = {}) {
  const IbccState ibcc = ibcc_fit(reports, config);
  return soft_gp_fit(reports.locations, ibcc.responsibilities, config, opt);
}

// ---------------------------------------------------------------------------
// Non-probabilistic references.
// ---------------------------------------------------------------------------

/// Most frequent label among the reports falling in each cell; empty cells and
/// exact ties resolve to label 1.
inline Eigen::VectorXi majority_vote(const ReportSet& reports, const GridSpec& grid) {
  grid.validate();
  const int cells = grid.num_cells();
  const int num_labels = std::max(1, reports.num_labels);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(cells, num_labels);
  if (reports.num_locations() > 0 && reports.locations.cols() != 2)
    throw std::invalid_argument("majority_vote: needs 2-D locations");
  for (const Report& e : reports.entries) {
    const int cell = grid.cell_index(reports.locations(e.location, 0),
                                     reports.locations(e.location, 1));
    if (cell >= 0) counts(cell, e.label - 1) += 1.0;
  }
  Eigen::VectorXi out(cells);
  for (int c = 0; c < cells; ++c) {
    int best = 0;
    for (int l = 1; l < num_labels; ++l)
      if (counts(c, l) > counts(c, best)) best = l;
    out[c] = best + 1;
  }
  return out;
}

/// Fraction of event labels among the k report entries nearest to each cell
/// center (all entries when fewer than k exist; 0 with no reports at all).
/// Distance ties keep report order.
inline Eigen::VectorXd nearest_neighbour(const ReportSet& reports, const GridSpec& grid,
                                         int k = 5, int event_label = 2) {
  grid.validate();
  if (k < 1) throw std::invalid_argument("nearest_neighbour: k >= 1");
  const int cells = grid.num_cells();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(cells);
  const int m = static_cast<int>(reports.entries.size());
  if (m == 0) return out;
  if (reports.locations.cols() != 2)
    throw std::invalid_argument("nearest_neighbour: needs 2-D locations");
  const Eigen::MatrixXd centers = grid_points(grid);
  const int take = std::min(k, m);
  std::vector<int> order(m);
  std::vector<double> dist(m);
  for (int c = 0; c < cells; ++c) {
    for (int e = 0; e < m; ++e)
      dist[e] = (reports.locations.row(reports.entries[e].location) - centers.row(c))
                    .squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](int a, int b) { return dist[a] != dist[b] ? dist[a] < dist[b] : a < b; });
    int positives = 0;
    for (int e = 0; e < take; ++e)
      if (reports.entries[order[e]].label == event_label) ++positives;
    out[c] = static_cast<double>(positives) / take;
  }
  return out;
}

}  // namespace heatmapbcc
