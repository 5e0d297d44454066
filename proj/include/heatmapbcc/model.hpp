#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/confusion.hpp"
#include "heatmapbcc/core.hpp"
#include "heatmapbcc/gpc.hpp"
#include "heatmapbcc/kernels.hpp"
#include "heatmapbcc/math.hpp"
#include "heatmapbcc/rng.hpp"

namespace heatmapbcc {

/// Converged variational factors plus everything needed to predict from them
/// or to warm-start a refit.
struct FitState {
  ModelConfig config;
  ReportSet reports;
  double length_scale = 0.0;  // may differ from config when ML-II ran
  Eigen::MatrixXd responsibilities;           // N x J
  std::vector<ConfusionFactor> confusion;     // per source
  std::vector<LatentFactor> latent;           // per class
  std::vector<InverseScaleFactor> inv_scale;  // per class
  std::vector<BetaNoiseParams> noise_prior;   // per class, moment-matched
  std::vector<double> lower_bounds;           // one entry per completed sweep
  bool converged = false;

  int iterations() const { return static_cast<int>(lower_bounds.size()); }
  int num_classes() const { return config.num_classes; }
};

/// Posterior summaries over a grid, one row per cell (row-major, J columns).
struct HeatmapGrid {
  GridSpec grid;
  Eigen::MatrixXd state_probs;  // E[t*], rows sum to 1
  Eigen::MatrixXd rho_mean;     // sampled E[rho*]
  Eigen::MatrixXd latent_mean;  // f*
  Eigen::MatrixXd latent_var;   // diag sigma*
};

struct FitOptions {
  bool optimize_length_scale = false;
  double length_scale_min = 1.0;
  double length_scale_max = 100.0;
  double mlii_log_tol = 0.15;
  int noise_match_samples = 10000;
  double inner_tol = 1e-4;
  int inner_max_iter = 20;
};

namespace detail {
constexpr int kBoundSamples = 1000;
}

/// Near-uniform start blended 1% toward each location's observed label
/// frequencies. The blend breaks class symmetry in the direction of the data
/// and, unlike seeded noise, commutes with class relabeling.
inline Eigen::MatrixXd init_responsibilities(const ReportSet& reports, int num_classes) {
  const int n = reports.num_locations();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, num_classes);
  Eigen::VectorXd totals = Eigen::VectorXd::Zero(n);
  for (const Report& e : reports.entries) {
    if (e.label <= num_classes) counts(e.location, e.label - 1) += 1.0;
    totals[e.location] += 1.0;
  }
  const double u = 1.0 / num_classes;
  Eigen::MatrixXd r(n, num_classes);
  for (int i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < num_classes; ++j) {
      const double freq = totals[i] > 0.0 ? counts(i, j) / totals[i] : u;
      r(i, j) = u + 0.01 * (freq - u);
      row_sum += r(i, j);
    }
    for (int j = 0; j < num_classes; ++j) r(i, j) /= row_sum;
  }
  return r;
}

/// Responsibilities r_{i,j} proportional to
/// exp(f_j(x_i) + sum_s E[log pi^s_{j, c_i^s}]); the log-sum-exp part of
/// E[log rho] cancels against the normalizer and is never formed.
inline Eigen::MatrixXd update_responsibilities(const Eigen::MatrixXd& f_hat,
                                               const std::vector<Eigen::MatrixXd>& e_log_pi,
                                               const ReportSet& reports) {
  const int num_classes = static_cast<int>(f_hat.cols());
  if (f_hat.rows() != reports.num_locations())
    throw std::invalid_argument("update_responsibilities: f_hat must be N x J");
  Eigen::MatrixXd logits = f_hat;
  for (const Report& e : reports.entries) {
    const Eigen::MatrixXd& e_pi = e_log_pi.at(e.source_id);
    if (e_pi.rows() != num_classes || e.label > e_pi.cols())
      throw std::invalid_argument("update_responsibilities: confusion expectation shape mismatch");
    for (int j = 0; j < num_classes; ++j) logits(e.location, j) += e_pi(j, e.label - 1);
  }
  for (int i = 0; i < logits.rows(); ++i) {
    if (!(logits.row(i).maxCoeff() > -std::numeric_limits<double>::infinity()))
      throw NumericalError("update_responsibilities: all-(-inf) logits at location " +
                           std::to_string(i));
    softmax_in_place(logits.row(i));
  }
  return logits;
}

namespace detail {

struct WarmStart {
  Eigen::MatrixXd f_init;
  std::vector<ConfusionFactor> confusion;
  std::vector<InverseScaleFactor> inv_scale;
};

/// Variational lower bound. The intractable E[log sum_j exp f_j] inside
/// E[log rho] is estimated by fixed-seed Monte Carlo over the q(f) marginals;
/// the stream is keyed per point so successive evaluations are comparable.
inline double vb_lower_bound(const ReportSet& reports, const Eigen::MatrixXd& r,
                             const std::vector<ConfusionFactor>& confusion,
                             const Eigen::MatrixXd& f_hat,
                             const std::vector<Eigen::MatrixXd>& sigma, const Eigen::MatrixXd& mu,
                             const std::vector<InverseScaleFactor>& inv_scale,
                             const Eigen::VectorXd& trace_quad, double a0, double b0,
                             double logdet_k, std::uint64_t seed) {
  const int n = reports.num_locations();
  const int num_classes = static_cast<int>(r.cols());

  double bound = 0.0;
  // E_q[log p(c | t, pi)] over observed reports.
  std::vector<Eigen::MatrixXd> e_log_pi(confusion.size());
  for (std::size_t s = 0; s < confusion.size(); ++s)
    e_log_pi[s] = expected_log_confusion(confusion[s].alpha);
  for (const Report& e : reports.entries)
    for (int j = 0; j < num_classes; ++j)
      bound += r(e.location, j) * e_log_pi[e.source_id](j, e.label - 1);

  // E_q[log p(t | rho)] - E_q[log q(t)].
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd sd(num_classes);
    for (int j = 0; j < num_classes; ++j) sd[j] = std::sqrt(std::max(0.0, sigma[j](i, i)));
    Rng rng(seed, "elbo-lse", static_cast<std::uint64_t>(i));
    const double e_lse =
        expected_log_sum_exp_mc(f_hat.row(i).transpose(), sd, kBoundSamples, rng);
    for (int j = 0; j < num_classes; ++j) {
      if (r(i, j) > 0.0)
        bound += r(i, j) * (f_hat(i, j) - e_lse - std::log(r(i, j)));
    }
  }

  // E_q[log p(f | mu, K/varsigma)] - E_q[log q(f)], then the varsigma and pi KLs.
  for (int j = 0; j < num_classes; ++j) {
    const double logdet_sigma = log_det_from_llt(cholesky_with_jitter(sigma[j]).llt);
    bound += -0.5 * logdet_k + 0.5 * n * inv_scale[j].expected_log() -
             0.5 * inv_scale[j].expectation() * trace_quad[j] + 0.5 * logdet_sigma + 0.5 * n;
    bound -= gamma_kl(inv_scale[j].a, inv_scale[j].b, a0, b0);
  }
  for (const ConfusionFactor& c : confusion)
    for (int j = 0; j < num_classes; ++j)
      bound -= dirichlet_kl(c.alpha.row(j), c.alpha0.row(j));
  return bound;
}

inline FitState fit_vb(const ReportSet& reports_in, const ModelConfig& config,
                       const FitOptions& opt, const WarmStart* warm, int min_iterations) {
  config.validate();
  reports_in.validate();
  if (reports_in.entries.empty())
    throw std::invalid_argument("fit: at least one report is required");
  if (reports_in.num_labels > config.labels())
    throw std::invalid_argument("fit: reports carry labels beyond the configured label space");

  ReportSet reports = reports_in;
  reports.num_labels = config.labels();
  const int n = reports.num_locations();
  const int num_classes = config.num_classes;
  const int num_sources = reports.num_sources;

  KernelSpec spec{KernelFamily::Matern32, config.length_scale, 1.0};
  const Eigen::MatrixXd k = gram(reports.locations, reports.locations, spec);
  const JitteredLlt k_llt = cholesky_with_jitter(k);
  const double logdet_k = log_det_from_llt(k_llt.llt);
  // K^-1 up front: tr(K^-1 Sigma) is then an elementwise sum each sweep
  // instead of an n-column solve.
  const Eigen::MatrixXd k_inv = k_llt.llt.solve(Eigen::MatrixXd::Identity(n, n));

  const Eigen::VectorXd mean_j = config.resolved_prior_mean();
  Eigen::MatrixXd mu(n, num_classes);
  for (int j = 0; j < num_classes; ++j) mu.col(j).setConstant(mean_j[j]);

  std::vector<Eigen::MatrixXd> alpha0(num_sources);
  for (int s = 0; s < num_sources; ++s) alpha0[s] = config.alpha0_for(s, num_sources);

  // Observation-noise beta prior moment-matched to the GP prior through the
  // softmax; the prior is stationary, so one set of moments serves every point.
  const Eigen::VectorXd prior_var =
      Eigen::VectorXd::Constant(num_classes, config.b0 / config.a0);
  const SoftmaxMoments prior_moments =
      prior_rho_moments(mean_j, prior_var, opt.noise_match_samples, config.rng_seed);
  std::vector<BetaNoiseParams> noise_prior(num_classes);
  for (int j = 0; j < num_classes; ++j)
    noise_prior[j] = moment_match_beta(prior_moments.mean[j], prior_moments.var[j]);

  Eigen::MatrixXd r;
  Eigen::MatrixXd f_hat;
  std::vector<ConfusionFactor> confusion;
  std::vector<InverseScaleFactor> inv_scale;
  bool r_update_from_first_sweep = false;
  if (warm != nullptr) {
    f_hat = warm->f_init;
    confusion = warm->confusion;
    inv_scale = warm->inv_scale;
    r = init_responsibilities(reports, num_classes);  // replaced in sweep 1
    r_update_from_first_sweep = true;
  } else {
    r = init_responsibilities(reports, num_classes);
    f_hat = mu;
    confusion.resize(num_sources);
    for (int s = 0; s < num_sources; ++s) confusion[s] = {alpha0[s], alpha0[s]};
    inv_scale.assign(num_classes, InverseScaleFactor{config.a0, config.b0});
  }

  const double tol = config.convergence_tol > 0.0 ? config.convergence_tol : 1e-3 * n;
  std::vector<double> trace;
  trace.reserve(config.max_iterations);
  bool converged = false;
  EkfResult ekf;
  std::vector<Eigen::MatrixXd> sigma(num_classes);
  Eigen::VectorXd trace_quad(num_classes);

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    std::vector<Eigen::MatrixXd> e_log_pi(num_sources);
    for (int s = 0; s < num_sources; ++s)
      e_log_pi[s] = expected_log_confusion(confusion[s].alpha);
    if (iter > 1 || r_update_from_first_sweep)
      r = update_responsibilities(f_hat, e_log_pi, reports);
    confusion = update_confusion(alpha0, r, reports);

    std::vector<Eigen::MatrixXd> k_hat(num_classes);
    for (int j = 0; j < num_classes; ++j) k_hat[j] = k / inv_scale[j].expectation();
    ekf = ekf_inner_loop(mu, k_hat, r, noise_prior, f_hat, opt.inner_tol, opt.inner_max_iter);
    f_hat = ekf.f_hat;
    for (int j = 0; j < num_classes; ++j) {
      sigma[j] = ekf_covariance(k_hat[j], ekf.w[j], ekf.g.col(j));
      const Eigen::VectorXd d = f_hat.col(j) - mu.col(j);
      trace_quad[j] = (k_inv.array() * sigma[j].array()).sum() + d.dot(k_llt.llt.solve(d));
      inv_scale[j] = InverseScaleFactor{config.a0 + 0.5 * n,
                                        config.b0 + 0.5 * trace_quad[j]};
      if (!(inv_scale[j].b > 0.0))
        throw NumericalError("fit: inverse-scale rate became non-positive");
    }

    trace.push_back(vb_lower_bound(reports, r, confusion, f_hat, sigma, mu, inv_scale,
                                   trace_quad, config.a0, config.b0, logdet_k,
                                   config.rng_seed));
    const int done = static_cast<int>(trace.size());
    if (done >= std::max(min_iterations, 2) &&
        std::abs(trace[done - 1] - trace[done - 2]) < tol) {
      converged = true;
      break;
    }
  }

  FitState state;
  state.config = config;
  state.config.alpha0 = config.resolved_alpha0();  // snapshots store the effective prior
  state.reports = reports;
  state.length_scale = config.length_scale;
  state.responsibilities = r;
  state.confusion = confusion;
  state.noise_prior = noise_prior;
  state.inv_scale = inv_scale;
  state.latent.resize(num_classes);
  for (int j = 0; j < num_classes; ++j)
    state.latent[j] = LatentFactor{mu.col(j), f_hat.col(j), ekf.g.col(j), ekf.q.col(j), sigma[j]};
  state.lower_bounds = std::move(trace);
  state.converged = converged;
  return state;
}

}  // namespace detail

/// Variational fit. With optimize_length_scale set, an outer golden-section
/// search maximizes the converged lower bound over the length scale first.
inline FitState fit(const ReportSet& reports, const ModelConfig& config,
                    const FitOptions& options = {}) {
  if (!options.optimize_length_scale)
    return detail::fit_vb(reports, config, options, nullptr, 3);
  const auto objective = [&](double l) {
    ModelConfig c = config;
    c.length_scale = l;
    try {
      return detail::fit_vb(reports, c, options, nullptr, 3).lower_bounds.back();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  const LengthScaleResult found = optimize_length_scale(
      objective, options.length_scale_min, options.length_scale_max, options.mlii_log_tol);
  ModelConfig c = config;
  c.length_scale = found.length_scale;
  return detail::fit_vb(reports, c, options, nullptr, 3);
}

/// Recomputes the lower bound of a fitted (or deserialized) state.
inline double lower_bound(const FitState& state) {
  const int num_classes = state.num_classes();
  KernelSpec spec{KernelFamily::Matern32, state.length_scale, 1.0};
  const Eigen::MatrixXd k = gram(state.reports.locations, state.reports.locations, spec);
  const JitteredLlt k_llt = cholesky_with_jitter(k);
  const int n = state.reports.num_locations();
  Eigen::MatrixXd mu(n, num_classes), f_hat(n, num_classes);
  std::vector<Eigen::MatrixXd> sigma(num_classes);
  Eigen::VectorXd trace_quad(num_classes);
  for (int j = 0; j < num_classes; ++j) {
    mu.col(j) = state.latent[j].mu;
    f_hat.col(j) = state.latent[j].f_hat;
    sigma[j] = state.latent[j].sigma;
    const Eigen::VectorXd d = f_hat.col(j) - mu.col(j);
    trace_quad[j] = k_llt.llt.solve(sigma[j]).trace() + d.dot(k_llt.llt.solve(d));
  }
  return detail::vb_lower_bound(state.reports, state.responsibilities, state.confusion, f_hat,
                                sigma, mu, state.inv_scale, trace_quad, state.config.a0,
                                state.config.b0, log_det_from_llt(k_llt.llt),
                                state.config.rng_seed);
}

/// Posterior heatmap over grid cells. State probabilities follow the
/// responsibility formula with report terms only at cells whose center
/// coincides with a training location; rho is summarized by sampling.
inline HeatmapGrid predict(const FitState& state, const GridSpec& grid, int n_samples = 2000,
                           std::optional<std::uint64_t> seed = {}) {
  grid.validate();
  if (state.reports.locations.cols() != 2)
    throw std::invalid_argument("predict: grid prediction needs 2-D training locations");
  if (n_samples < 1) throw std::invalid_argument("predict: n_samples >= 1");
  const std::uint64_t sample_seed = seed.value_or(state.config.rng_seed);
  const int num_classes = state.num_classes();
  const int n = state.reports.num_locations();
  const Eigen::MatrixXd test = grid_points(grid);

  Eigen::MatrixXd f_train(n, num_classes);
  for (int j = 0; j < num_classes; ++j) f_train.col(j) = state.latent[j].f_hat;
  const Eigen::MatrixXd s_train = detail::softmax_rows(f_train);
  const Eigen::VectorXd mean_j = state.config.resolved_prior_mean();

  HeatmapGrid out;
  out.grid = grid;
  out.latent_mean.resize(test.rows(), num_classes);
  out.latent_var.resize(test.rows(), num_classes);
  for (int j = 0; j < num_classes; ++j) {
    KernelSpec spec{KernelFamily::Matern32, state.length_scale,
                    state.inv_scale[j].expectation()};
    const LatentPrediction lp = predict_latent(
        state.reports.locations, test, spec, state.latent[j].g_diag, state.latent[j].q_diag,
        state.latent[j].f_hat, s_train.col(j), state.latent[j].mu, mean_j[j],
        state.responsibilities.col(j));
    out.latent_mean.col(j) = lp.mean;
    out.latent_var.col(j) = lp.var;
  }
  out.rho_mean = sample_state_probs(out.latent_mean, out.latent_var, n_samples, sample_seed);

  std::vector<Eigen::MatrixXd> e_log_pi(state.confusion.size());
  for (std::size_t s = 0; s < state.confusion.size(); ++s)
    e_log_pi[s] = expected_log_confusion(state.confusion[s].alpha);
  Eigen::MatrixXd logits = out.latent_mean;
  const double coord_tol = 1e-9 * (grid.cell_dx + grid.cell_dy);
  std::vector<int> cell_of(n, -1);
  for (int i = 0; i < n; ++i) {
    const double x = state.reports.locations(i, 0), y = state.reports.locations(i, 1);
    const int cell = grid.cell_index(x, y);
    if (cell < 0) continue;
    const Eigen::Vector2d c = grid.center(cell % grid.width, cell / grid.width);
    if (std::abs(c.x() - x) <= coord_tol && std::abs(c.y() - y) <= coord_tol) cell_of[i] = cell;
  }
  for (const Report& e : state.reports.entries) {
    const int cell = cell_of[e.location];
    if (cell < 0) continue;
    for (int j = 0; j < num_classes; ++j)
      logits(cell, j) += e_log_pi[e.source_id](j, e.label - 1);
  }
  for (int i = 0; i < logits.rows(); ++i) softmax_in_place(logits.row(i));
  out.state_probs = std::move(logits);
  return out;
}

/// Merges new reports into the state's report set and refits from the current
/// factors (warm start). New locations start from the prior mean; new sources
/// start from their configured prior.
inline FitState incremental_update(const FitState& state, const ReportSet& new_reports,
                                   const FitOptions& options = {}) {
  const ReportSet merged = merge_report_sets(state.reports, new_reports);
  const int n_old = state.reports.num_locations();
  const int num_classes = state.num_classes();
  const Eigen::VectorXd mean_j = state.config.resolved_prior_mean();

  detail::WarmStart warm;
  warm.f_init.resize(merged.num_locations(), num_classes);
  for (int j = 0; j < num_classes; ++j) {
    warm.f_init.col(j).setConstant(mean_j[j]);
    warm.f_init.col(j).head(n_old) = state.latent[j].f_hat;
  }
  warm.confusion = state.confusion;
  for (int s = static_cast<int>(warm.confusion.size()); s < merged.num_sources; ++s) {
    const Eigen::MatrixXd a0 = state.config.alpha0_for(s, merged.num_sources);
    warm.confusion.push_back({a0, a0});
  }
  warm.inv_scale = state.inv_scale;
  return detail::fit_vb(merged, state.config, options, &warm, 2);
}

}  // namespace heatmapbcc
