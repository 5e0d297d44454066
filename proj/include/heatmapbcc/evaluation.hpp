#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/baselines.hpp"
#include "heatmapbcc/core.hpp"
#include "heatmapbcc/math.hpp"
#include "heatmapbcc/model.hpp"
#include "heatmapbcc/parallel.hpp"
#include "heatmapbcc/rng.hpp"
#include "heatmapbcc/synthetic.hpp"

namespace heatmapbcc {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Mann-Whitney AUC; tied scores count 1/2. Labels are 0/1.
inline double auc(const Eigen::VectorXd& scores, const Eigen::VectorXi& labels) {
  const int n = static_cast<int>(scores.size());
  if (labels.size() != n) throw std::invalid_argument("auc: scores and labels differ in length");
  long n_pos = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("auc: labels must be 0 or 1");
    n_pos += labels[i];
  }
  const long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc: needs at least one positive and one negative label");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * ((i + 1) + j);  // 1-based ranks i+1 .. j
    for (int k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Mean binary cross entropy in bits; predictions clipped to [1e-9, 1-1e-9].
inline double cross_entropy_bits(const Eigen::VectorXd& probs, const Eigen::VectorXd& gold) {
  const int n = static_cast<int>(probs.size());
  if (gold.size() != n)
    throw std::invalid_argument("cross_entropy_bits: lengths differ");
  if (n == 0) throw std::invalid_argument("cross_entropy_bits: empty input");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = gold[i];
    if (!(g >= 0.0 && g <= 1.0))
      throw std::invalid_argument("cross_entropy_bits: gold probabilities must lie in [0, 1]");
    const double p = std::clamp(probs[i], 1e-9, 1.0 - 1e-9);
    total -= g * std::log2(p) + (1.0 - g) * std::log2(1.0 - p);
  }
  return total / n;
}

/// Negative log density of a true state probability under the
/// logistic-normal implied by a Gaussian latent with the given mean and
/// variance (change of variables through the logit).
inline double nlpd_rho(double latent_mean, double latent_var, double true_rho) {
  if (!(latent_var > 0.0)) throw std::invalid_argument("nlpd_rho: variance must be positive");
  if (!(true_rho > 0.0 && true_rho < 1.0))
    throw std::invalid_argument("nlpd_rho: true probability must lie strictly inside (0, 1)");
  const double z = logit(true_rho) - latent_mean;
  return 0.5 * std::log(2.0 * M_PI * latent_var) + z * z / (2.0 * latent_var) +
         std::log(true_rho * (1.0 - true_rho));
}

/// Negative log density of a true state probability under a Beta posterior.
inline double nlpd_beta(double true_rho, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("nlpd_beta: parameters must be positive");
  if (!(true_rho > 0.0 && true_rho < 1.0))
    throw std::invalid_argument("nlpd_beta: true probability must lie strictly inside (0, 1)");
  const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return log_beta - (a - 1.0) * std::log(true_rho) - (b - 1.0) * std::log(1.0 - true_rho);
}

/// Linear-interpolation quantile (q in [0, 1]) over the finite entries;
/// NaN when no finite entries exist.
inline double quantile(std::vector<double> values, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0, 1]");
  values.erase(std::remove_if(values.begin(), values.end(),
                              [](double v) { return !std::isfinite(v); }),
               values.end());
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = q * (values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
}

inline double median(const std::vector<double>& values) { return quantile(values, 0.5); }

// ---------------------------------------------------------------------------
// Methods under comparison.
// ---------------------------------------------------------------------------

enum class Method {
  HeatmapBcc,
  Ibcc,
  Kde,
  GpOnly,
  IbccGp,
  MajorityVote,
  NearestNeighbour,
};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::HeatmapBcc: return "heatmapbcc";
    case Method::Ibcc: return "ibcc";
    case Method::Kde: return "kde";
    case Method::GpOnly: return "gp";
    case Method::IbccGp: return "ibcc_gp";
    case Method::MajorityVote: return "majority";
    case Method::NearestNeighbour: return "knn";
  }
  return "?";
}

inline std::vector<Method> all_methods() {
  return {Method::HeatmapBcc, Method::Ibcc,         Method::Kde,
          Method::GpOnly,     Method::IbccGp,       Method::MajorityVote,
          Method::NearestNeighbour};
}

inline Method method_from_name(const std::string& name) {
  for (Method m : all_methods())
    if (name == method_name(m)) return m;
  std::string known;
  for (Method m : all_methods()) {
    if (!known.empty()) known += ", ";
    known += method_name(m);
  }
  throw std::invalid_argument("unknown method '" + name + "' (expected one of: " + known + ")");
}

/// Per-cell event probability plus, when the method defines one, a density
/// over the state probability for NLPD.
struct MethodPrediction {
  enum class Density { None, LogisticNormal, Beta };
  Eigen::VectorXd p_event;
  Density density = Density::None;
  Eigen::VectorXd ln_mean, ln_var;  // logistic-normal parameters per cell
  double beta_a = 0.0, beta_b = 0.0;
};

/// Fits one method on the given reports and predicts the event probability
/// (binary state 2) on the grid. Binary states only.
inline MethodPrediction run_method(Method method, const std::vector<RawReport>& raw,
                                   const GridSpec& grid, const ModelConfig& config,
                                   const FitOptions& options = {}) {
  if (config.num_classes != 2)
    throw std::invalid_argument("run_method: the benchmark assumes binary states");
  const ReportSet set = make_report_set(raw);
  MethodPrediction out;
  switch (method) {
    case Method::HeatmapBcc: {
      const FitState st = fit(set, config, options);
      const HeatmapGrid hm = predict(st, grid);
      out.p_event = hm.state_probs.col(1);
      out.density = MethodPrediction::Density::LogisticNormal;
      out.ln_mean = hm.latent_mean.col(1) - hm.latent_mean.col(0);
      out.ln_var = hm.latent_var.col(1) + hm.latent_var.col(0);
      break;
    }
    case Method::Ibcc: {
      const IbccState st = ibcc_fit(set, config);
      out.p_event = ibcc_predict_grid(st, grid).col(1);
      out.density = MethodPrediction::Density::Beta;
      out.beta_a = st.kappa_params[1];
      out.beta_b = st.kappa_params[0];
      break;
    }
    case Method::Kde: {
      out.p_event = kde_predict(set, grid, config.length_scale);
      break;
    }
    case Method::GpOnly:
    case Method::IbccGp: {
      const SoftGpState st = method == Method::GpOnly ? gp_only_fit(set, config, options)
                                                      : ibcc_gp_fit(set, config, options);
      const HeatmapGrid hm = soft_gp_predict(st, grid);
      out.p_event = hm.rho_mean.col(1);
      out.density = MethodPrediction::Density::LogisticNormal;
      out.ln_mean = hm.latent_mean.col(1) - hm.latent_mean.col(0);
      out.ln_var = hm.latent_var.col(1) + hm.latent_var.col(0);
      break;
    }
    case Method::MajorityVote: {
      const Eigen::VectorXi votes = majority_vote(set, grid);
      out.p_event = (votes.array() == 2).cast<double>();
      break;
    }
    case Method::NearestNeighbour: {
      out.p_event = nearest_neighbour(set, grid);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Incremental train/test experiment.
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  std::vector<Method> methods = all_methods();
  std::vector<int> schedule;           // strictly increasing subset sizes
  std::vector<std::uint64_t> seeds;    // one experiment repetition per seed
  ModelConfig config;
  FitOptions options;
};

struct ResultRow {
  Method method{};
  std::uint64_t seed = 0;
  int n_labels = 0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double cross_entropy = std::numeric_limits<double>::quiet_NaN();
  double nlpd = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  std::string error;
};

/// Per (method, size) medians with quartiles, plus the median per-seed
/// improvement of HeatmapBCC over the method (positive favors HeatmapBCC for
/// every column: AUC improvement is auc(hbcc) - auc(method); cross-entropy
/// and NLPD improvements are metric(method) - metric(hbcc)).
struct SummaryRow {
  Method method{};
  int n_labels = 0;
  double auc_median, auc_q25, auc_q75;
  double ce_median, ce_q25, ce_q75;
  double nlpd_median, nlpd_q25, nlpd_q75;
  double auc_improvement_median;
  double ce_improvement_median;
  double nlpd_improvement_median;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;      // seed-major, then schedule, then method
  std::vector<SummaryRow> summary;  // schedule-major, then method
};

namespace detail {

inline double safe_mean_nlpd(const MethodPrediction& pred, const Eigen::VectorXd& gold_rho) {
  if (pred.density == MethodPrediction::Density::None)
    return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (int c = 0; c < gold_rho.size(); ++c) {
    if (pred.density == MethodPrediction::Density::LogisticNormal)
      total += nlpd_rho(pred.ln_mean[c], pred.ln_var[c], gold_rho[c]);
    else
      total += nlpd_beta(gold_rho[c], pred.beta_a, pred.beta_b);
  }
  return total / gold_rho.size();
}

}  // namespace detail

/// Nested subset indices for one repetition: the first `size` entries of a
/// seeded shuffle, in ascending order, so smaller subsets are contained in
/// larger ones.
inline std::vector<int> subset_indices(int n_total, int size, std::uint64_t seed) {
  if (size < 1 || size > n_total)
    throw std::invalid_argument("subset_indices: size must lie in [1, n_total]");
  Rng rng(seed, "subset");
  const std::vector<int> perm = rng.permutation(n_total);
  std::vector<int> idx(perm.begin(), perm.begin() + size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Medians, quartiles and HeatmapBCC-improvement columns grouped by
/// (subset size, method); rows pair up with the HeatmapBCC row of the same
/// (seed, subset size) for the improvement metrics. Encounter order of sizes
/// and methods is preserved.
inline std::vector<SummaryRow> summarize_results(const std::vector<ResultRow>& rows) {
  std::vector<int> sizes;
  std::vector<Method> methods;
  for (const ResultRow& r : rows) {
    if (std::find(sizes.begin(), sizes.end(), r.n_labels) == sizes.end())
      sizes.push_back(r.n_labels);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
  }
  const auto hbcc_row = [&](std::uint64_t seed, int n_labels) -> const ResultRow* {
    for (const ResultRow& r : rows)
      if (r.method == Method::HeatmapBcc && r.seed == seed && r.n_labels == n_labels) return &r;
    return nullptr;
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<SummaryRow> summary;
  for (int n_labels : sizes) {
    for (Method m : methods) {
      SummaryRow s{};
      s.method = m;
      s.n_labels = n_labels;
      std::vector<double> aucs, ces, nlpds, d_auc, d_ce, d_nlpd;
      for (const ResultRow& r : rows) {
        if (r.method != m || r.n_labels != n_labels) continue;
        aucs.push_back(r.auc);
        ces.push_back(r.cross_entropy);
        nlpds.push_back(r.nlpd);
        if (const ResultRow* ref = hbcc_row(r.seed, n_labels)) {
          d_auc.push_back(ref->auc - r.auc);
          d_ce.push_back(r.cross_entropy - ref->cross_entropy);
          d_nlpd.push_back(r.nlpd - ref->nlpd);
        }
      }
      s.auc_median = median(aucs);
      s.auc_q25 = quantile(aucs, 0.25);
      s.auc_q75 = quantile(aucs, 0.75);
      s.ce_median = median(ces);
      s.ce_q25 = quantile(ces, 0.25);
      s.ce_q75 = quantile(ces, 0.75);
      s.nlpd_median = median(nlpds);
      s.nlpd_q25 = quantile(nlpds, 0.25);
      s.nlpd_q75 = quantile(nlpds, 0.75);
      s.auc_improvement_median = d_auc.empty() ? nan : median(d_auc);
      s.ce_improvement_median = d_ce.empty() ? nan : median(d_ce);
      s.nlpd_improvement_median = d_nlpd.empty() ? nan : median(d_nlpd);
      summary.push_back(s);
    }
  }
  return summary;
}

inline ExperimentResult incremental_experiment(const std::vector<RawReport>& raw,
                                               const GroundTruth& gold, const GridSpec& grid,
                                               const ExperimentSpec& spec) {
  grid.validate();
  if (spec.methods.empty()) throw std::invalid_argument("experiment: no methods given");
  if (spec.seeds.empty()) throw std::invalid_argument("experiment: no seeds given");
  if (spec.schedule.empty()) throw std::invalid_argument("experiment: empty schedule");
  for (std::size_t z = 0; z < spec.schedule.size(); ++z) {
    if (spec.schedule[z] < 1 || spec.schedule[z] > static_cast<int>(raw.size()))
      throw std::invalid_argument("experiment: schedule sizes must lie in [1, #reports]");
    if (z > 0 && spec.schedule[z] <= spec.schedule[z - 1])
      throw std::invalid_argument("experiment: schedule must be strictly increasing");
  }
  if (gold.t.size() != grid.num_cells() || gold.rho.size() != grid.num_cells())
    throw std::invalid_argument("experiment: gold standard does not match the grid");

  Eigen::VectorXi labels01(gold.t.size());
  Eigen::VectorXd gold01(gold.t.size());
  for (int c = 0; c < gold.t.size(); ++c) {
    labels01[c] = gold.t[c] == 2 ? 1 : 0;
    gold01[c] = labels01[c];
  }

  const int n_sizes = static_cast<int>(spec.schedule.size());
  const int n_methods = static_cast<int>(spec.methods.size());
  ExperimentResult result;
  result.rows.resize(spec.seeds.size() * n_sizes * n_methods);

  parallel_for(spec.seeds.size(), [&](std::size_t si) {
    const std::uint64_t seed = spec.seeds[si];
    ModelConfig config = spec.config;
    config.rng_seed = seed;
    for (int zi = 0; zi < n_sizes; ++zi) {
      const std::vector<int> idx =
          subset_indices(static_cast<int>(raw.size()), spec.schedule[zi], seed);
      std::vector<RawReport> sub;
      sub.reserve(idx.size());
      for (int k : idx) sub.push_back(raw[k]);
      for (int mi = 0; mi < n_methods; ++mi) {
        ResultRow row;
        row.method = spec.methods[mi];
        row.seed = seed;
        row.n_labels = spec.schedule[zi];
        try {
          const MethodPrediction pred =
              run_method(spec.methods[mi], sub, grid, config, spec.options);
          row.ok = true;
          try {
            row.auc = auc(pred.p_event, labels01);
          } catch (const std::invalid_argument&) {
          }
          row.cross_entropy = cross_entropy_bits(pred.p_event, gold01);
          row.nlpd = detail::safe_mean_nlpd(pred, gold.rho);
        } catch (const std::exception& e) {
          row.ok = false;
          row.error = e.what();
        }
        result.rows[(si * n_sizes + zi) * n_methods + mi] = row;
      }
    }
  });

  result.summary = summarize_results(result.rows);
  return result;
}

}  // namespace heatmapbcc
