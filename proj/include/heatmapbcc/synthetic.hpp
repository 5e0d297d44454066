#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/core.hpp"
#include "heatmapbcc/kernels.hpp"
#include "heatmapbcc/math.hpp"
#include "heatmapbcc/rng.hpp"

namespace heatmapbcc {

enum class ReporterKind { Reliable, Noisy, Biased };

/// Dirichlet parameters from which a simulated reporter's true confusion
/// matrix is drawn (one row per true class).
struct ReporterSpec {
  ReporterKind kind = ReporterKind::Reliable;
  Eigen::MatrixXd dirichlet_params;  // J x L, positive
};

inline ReporterSpec reliable_spec(int num_classes = 2, int num_labels = 2) {
  ReporterSpec s{ReporterKind::Reliable,
                 Eigen::MatrixXd::Ones(num_classes, num_labels)};
  for (int j = 0; j < std::min(num_classes, num_labels); ++j) s.dirichlet_params(j, j) = 10.0;
  return s;
}

inline ReporterSpec noisy_spec(int num_classes = 2, int num_labels = 2) {
  return {ReporterKind::Noisy,
          Eigen::MatrixXd::Constant(num_classes, num_labels, 5.0)};
}

/// Leans toward label 1 whatever the true class, more strongly when the true
/// class really is 1.
inline ReporterSpec biased_spec() {
  Eigen::MatrixXd p(2, 2);
  p << 7.0, 1.0, 6.0, 2.0;
  return {ReporterKind::Biased, p};
}

/// One latent surface over the grid's cell centers with the binary event
/// state drawn through the logistic link.
struct GroundTruth {
  Eigen::VectorXd f;    // latent function, one value per cell (row-major)
  Eigen::VectorXd rho;  // P(state = 2) = sigmoid(f)
  Eigen::VectorXi t;    // true state per cell, in {1, 2}
};

inline GroundTruth draw_ground_truth(const GridSpec& grid, double length_scale,
                                     double inverse_scale, std::uint64_t seed) {
  grid.validate();
  if (!(inverse_scale > 0.0))
    throw std::invalid_argument("draw_ground_truth: inverse_scale must be positive");
  const int cells = grid.num_cells();
  if (cells > 5000)
    throw std::invalid_argument("draw_ground_truth: dense Gaussian draw limited to 5000 cells");
  const Eigen::MatrixXd points = grid_points(grid);
  KernelSpec spec{KernelFamily::Matern32, length_scale, 1.0};
  const Eigen::MatrixXd k = gram(points, points, spec) / inverse_scale;
  const JitteredLlt llt = cholesky_with_jitter(k);

  Rng f_rng(seed, "ground-truth-f");
  Eigen::VectorXd z(cells);
  for (int i = 0; i < cells; ++i) z[i] = f_rng.normal();

  GroundTruth truth;
  truth.f = llt.llt.matrixL() * z;
  truth.rho.resize(cells);
  for (int i = 0; i < cells; ++i) truth.rho[i] = logistic(truth.f[i]);
  Rng t_rng(seed, "ground-truth-t");
  truth.t.resize(cells);
  for (int i = 0; i < cells; ++i) truth.t[i] = t_rng.uniform() < truth.rho[i] ? 2 : 1;
  return truth;
}

/// Draws each reporter's true confusion matrix row-wise from its Dirichlet
/// parameters (an independent stream per reporter).
inline std::vector<Eigen::MatrixXd> simulate_crowd(const std::vector<ReporterSpec>& specs,
                                                   std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> out(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const Eigen::MatrixXd& p = specs[s].dirichlet_params;
    if (p.rows() < 1 || p.cols() < 2 || (p.array() <= 0.0).any())
      throw std::invalid_argument("simulate_crowd: dirichlet_params must be positive, >= 2 labels");
    Rng rng(seed, "crowd", s);
    out[s].resize(p.rows(), p.cols());
    for (int j = 0; j < p.rows(); ++j)
      out[s].row(j) = rng.dirichlet(p.row(j).transpose()).transpose();
  }
  return out;
}

enum class LocationMode { GridDiscrete, Continuous };

/// Uniformly samples (reporter, location) pairs and draws each label from the
/// reporter's confusion row for the true state at that location. Continuous
/// mode samples real coordinates and reads the state of the containing cell.
inline std::vector<RawReport> generate_raw_reports(const GroundTruth& truth,
                                                   const GridSpec& grid,
                                                   const std::vector<Eigen::MatrixXd>& confusions,
                                                   int n_reports, LocationMode mode,
                                                   std::uint64_t seed) {
  grid.validate();
  if (n_reports < 1) throw std::invalid_argument("generate_raw_reports: n_reports >= 1");
  if (confusions.empty())
    throw std::invalid_argument("generate_raw_reports: at least one reporter required");
  if (truth.t.size() != grid.num_cells())
    throw std::invalid_argument("generate_raw_reports: ground truth does not match grid");

  Rng rng(seed, "reports");
  std::vector<RawReport> raw;
  raw.reserve(n_reports);
  for (int k = 0; k < n_reports; ++k) {
    const int s = static_cast<int>(rng.below(confusions.size()));
    Eigen::VectorXd coords(2);
    int cell = -1;
    if (mode == LocationMode::GridDiscrete) {
      cell = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid.num_cells())));
      const Eigen::Vector2d c = grid.center(cell % grid.width, cell / grid.width);
      coords << c.x(), c.y();
    } else {
      coords << grid.origin.x() + rng.uniform() * grid.width * grid.cell_dx,
          grid.origin.y() + rng.uniform() * grid.height * grid.cell_dy;
      cell = grid.cell_index(coords[0], coords[1]);
      if (cell < 0) throw NumericalError("generate_raw_reports: sampled point left the grid");
    }
    const int true_class = truth.t[cell];
    if (true_class < 1 || true_class > confusions[s].rows())
      throw std::invalid_argument("generate_raw_reports: confusion matrix lacks the true class");
    const int label = 1 + static_cast<int>(rng.categorical(
                              confusions[s].row(true_class - 1).transpose()));
    raw.push_back(RawReport{coords, s, label});
  }
  return raw;
}

inline ReportSet generate_reports(const GroundTruth& truth, const GridSpec& grid,
                                  const std::vector<Eigen::MatrixXd>& confusions, int n_reports,
                                  LocationMode mode, std::uint64_t seed) {
  ReportSet set =
      make_report_set(generate_raw_reports(truth, grid, confusions, n_reports, mode, seed));
  set.num_sources = std::max(set.num_sources, static_cast<int>(confusions.size()));
  return set;
}

// ---------------------------------------------------------------------------
// Named end-to-end scenarios used by the simulation and benchmark commands.
// ---------------------------------------------------------------------------

enum class ScenarioKind { Noisy, Biased, Continuous };

inline const char* scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Noisy: return "noisy";
    case ScenarioKind::Biased: return "biased";
    case ScenarioKind::Continuous: return "continuous";
  }
  return "?";
}

inline ScenarioKind scenario_from_name(const std::string& name) {
  if (name == "noisy") return ScenarioKind::Noisy;
  if (name == "biased") return ScenarioKind::Biased;
  if (name == "continuous") return ScenarioKind::Continuous;
  throw std::invalid_argument("unknown scenario '" + name +
                              "' (expected noisy, biased or continuous)");
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Noisy;
  int grid_width = 20;
  int grid_height = 20;
  double length_scale = 10.0;
  double inverse_scale = 1.2;
  int n_reporters = 10;
  double adversary_frac = 0.5;  // fraction of noisy/biased reporters
  int n_reports = 800;
  std::uint64_t seed = 1;

  void validate() const {
    if (grid_width < 1 || grid_height < 1)
      throw std::invalid_argument("scenario: grid dimensions must be positive");
    if (!(length_scale > 0.0) || !(inverse_scale > 0.0))
      throw std::invalid_argument("scenario: length_scale and inverse_scale must be positive");
    if (n_reporters < 1 || n_reports < 1)
      throw std::invalid_argument("scenario: reporter and report counts must be positive");
    if (!(adversary_frac >= 0.0 && adversary_frac <= 1.0))
      throw std::invalid_argument("scenario: adversary fraction must lie in [0, 1]");
  }
};

struct ScenarioData {
  ScenarioSpec spec;
  GridSpec grid;
  GroundTruth truth;
  std::vector<ReporterSpec> reporter_specs;
  std::vector<Eigen::MatrixXd> confusions;  // true matrices
  std::vector<RawReport> raw;
};

/// The first round(frac*n) reporters take the scenario's unreliable profile
/// (noisy, or biased for the biased scenario); the rest are reliable.
/// Continuous scenarios sample real-valued report locations.
inline ScenarioData build_scenario(const ScenarioSpec& spec) {
  spec.validate();
  ScenarioData data;
  data.spec = spec;
  data.grid = GridSpec{spec.grid_width, spec.grid_height, Eigen::Vector2d(0.0, 0.0), 1.0, 1.0};
  data.truth = draw_ground_truth(data.grid, spec.length_scale, spec.inverse_scale, spec.seed);
  const int n_adv = static_cast<int>(std::lround(spec.adversary_frac * spec.n_reporters));
  const ReporterSpec adversary =
      spec.kind == ScenarioKind::Biased ? biased_spec() : noisy_spec();
  data.reporter_specs.reserve(spec.n_reporters);
  for (int s = 0; s < spec.n_reporters; ++s)
    data.reporter_specs.push_back(s < n_adv ? adversary : reliable_spec());
  data.confusions = simulate_crowd(data.reporter_specs, spec.seed);
  const LocationMode mode = spec.kind == ScenarioKind::Continuous ? LocationMode::Continuous
                                                                  : LocationMode::GridDiscrete;
  data.raw = generate_raw_reports(data.truth, data.grid, data.confusions, spec.n_reports, mode,
                                  spec.seed);
  return data;
}

}  // namespace heatmapbcc
