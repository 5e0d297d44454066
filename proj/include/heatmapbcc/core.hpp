#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/errors.hpp"

namespace heatmapbcc {

/// Rectangular analysis grid. Cells are indexed row-major (iy * width + ix)
/// and represented by their centers.
struct GridSpec {
  int width = 0;
  int height = 0;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double cell_dx = 1.0;
  double cell_dy = 1.0;

  int num_cells() const { return width * height; }

  void validate() const {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("GridSpec: width and height must be positive");
    if (!(cell_dx > 0.0) || !(cell_dy > 0.0))
      throw std::invalid_argument("GridSpec: cell sizes must be positive");
    if (!origin.allFinite()) throw std::invalid_argument("GridSpec: origin must be finite");
  }

  Eigen::Vector2d center(int ix, int iy) const {
    return {origin.x() + (ix + 0.5) * cell_dx, origin.y() + (iy + 0.5) * cell_dy};
  }

  /// Axis index of a coordinate; boundary coordinates belong to the cell
  /// nearer the origin, so the far edge itself is still in range.
  static int axis_index(double coord, double origin, double cell, int count) {
    const double c = (coord - origin) / cell;
    if (c < 0.0 || c > static_cast<double>(count)) return -1;
    int i = static_cast<int>(std::floor(c));
    if (static_cast<double>(i) == c && c > 0.0) --i;
    return std::min(i, count - 1);
  }

  /// Row-major cell index, or -1 when (x, y) lies outside the grid.
  int cell_index(double x, double y) const {
    const int ix = axis_index(x, origin.x(), cell_dx, width);
    const int iy = axis_index(y, origin.y(), cell_dy, height);
    if (ix < 0 || iy < 0) return -1;
    return iy * width + ix;
  }
};

/// All cell centers, one row per cell, row-major.
inline Eigen::MatrixXd grid_points(const GridSpec& grid) {
  grid.validate();
  Eigen::MatrixXd pts(grid.num_cells(), 2);
  for (int iy = 0; iy < grid.height; ++iy)
    for (int ix = 0; ix < grid.width; ++ix)
      pts.row(iy * grid.width + ix) = grid.center(ix, iy).transpose();
  return pts;
}

/// One report as it appears in input files: labels are 1-based, source ids
/// 0-based, coordinates D >= 1 real values.
struct RawReport {
  Eigen::VectorXd coords;
  int source_id = 0;
  int label = 1;
};

/// A report resolved against the deduplicated location table.
struct Report {
  int location = 0;
  int source_id = 0;
  int label = 1;
};

/// Reports plus their shared location table (first-seen order).
struct ReportSet {
  Eigen::MatrixXd locations;  // N x D
  std::vector<Report> entries;
  int num_sources = 0;  // S; source ids run 0..S-1
  int num_labels = 0;   // L; labels run 1..L

  int num_locations() const { return static_cast<int>(locations.rows()); }

  void validate() const {
    if (num_sources <= 0 || num_labels < 2)
      throw std::invalid_argument("ReportSet: needs num_sources >= 1 and num_labels >= 2");
    if (!locations.allFinite())
      throw std::invalid_argument("ReportSet: locations must be finite");
    for (const Report& e : entries) {
      if (e.location < 0 || e.location >= num_locations())
        throw std::invalid_argument("ReportSet: entry references missing location");
      if (e.source_id < 0 || e.source_id >= num_sources)
        throw std::invalid_argument("ReportSet: source id out of range");
      if (e.label < 1 || e.label > num_labels)
        throw std::invalid_argument("ReportSet: label out of range");
    }
  }
};

namespace detail {

/// Exact-coordinate location interner preserving first-seen order.
class LocationTable {
 public:
  int intern(const Eigen::VectorXd& coords) {
    std::vector<double> key(coords.data(), coords.data() + coords.size());
    auto [it, inserted] = index_.try_emplace(std::move(key), static_cast<int>(rows_.size()));
    if (inserted) rows_.push_back(coords);
    return it->second;
  }

  Eigen::MatrixXd matrix() const {
    const int d = rows_.empty() ? 0 : static_cast<int>(rows_.front().size());
    Eigen::MatrixXd m(static_cast<int>(rows_.size()), d);
    for (int i = 0; i < m.rows(); ++i) m.row(i) = rows_[i].transpose();
    return m;
  }

 private:
  std::map<std::vector<double>, int> index_;
  std::vector<Eigen::VectorXd> rows_;
};

inline void check_raw(const std::vector<RawReport>& raw) {
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const RawReport& r = raw[k];
    if (!r.coords.allFinite() || r.coords.size() < 1)
      throw std::invalid_argument("report " + std::to_string(k) + ": bad coordinates");
    if (r.source_id < 0)
      throw std::invalid_argument("report " + std::to_string(k) + ": negative source id");
    if (r.label < 1)
      throw std::invalid_argument("report " + std::to_string(k) + ": labels are 1-based");
  }
}

inline void infer_counts(const std::vector<RawReport>& raw, ReportSet& set) {
  for (const RawReport& r : raw) {
    set.num_sources = std::max(set.num_sources, r.source_id + 1);
    set.num_labels = std::max(set.num_labels, r.label);
  }
  set.num_sources = std::max(set.num_sources, 1);
  set.num_labels = std::max(set.num_labels, 2);
}

}  // namespace detail

/// Snaps reports to grid-cell centers and dedupes the resulting locations.
/// Reports outside the grid are rejected with their index.
inline ReportSet bin_reports(const std::vector<RawReport>& raw, const GridSpec& grid) {
  grid.validate();
  detail::check_raw(raw);
  ReportSet set;
  detail::LocationTable table;
  set.entries.reserve(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const RawReport& r = raw[k];
    if (r.coords.size() != 2)
      throw std::invalid_argument("report " + std::to_string(k) + ": grids need 2-D coordinates");
    const int cell = grid.cell_index(r.coords[0], r.coords[1]);
    if (cell < 0)
      throw std::invalid_argument("report " + std::to_string(k) + " at (" +
                                  std::to_string(r.coords[0]) + ", " +
                                  std::to_string(r.coords[1]) + ") lies outside the grid");
    const Eigen::Vector2d c = grid.center(cell % grid.width, cell / grid.width);
    set.entries.push_back({table.intern(c), r.source_id, r.label});
  }
  set.locations = table.matrix();
  detail::infer_counts(raw, set);
  set.validate();
  return set;
}

/// Location table from the raw coordinates themselves (continuous mode);
/// only exactly equal coordinates share a location.
inline ReportSet make_report_set(const std::vector<RawReport>& raw) {
  detail::check_raw(raw);
  ReportSet set;
  detail::LocationTable table;
  set.entries.reserve(raw.size());
  for (const RawReport& r : raw) set.entries.push_back({table.intern(r.coords), r.source_id, r.label});
  set.locations = table.matrix();
  detail::infer_counts(raw, set);
  set.validate();
  return set;
}

/// Union of two report sets; b's locations are re-interned against a's table.
inline ReportSet merge_report_sets(const ReportSet& a, const ReportSet& b) {
  if (a.num_locations() > 0 && b.num_locations() > 0 && a.locations.cols() != b.locations.cols())
    throw std::invalid_argument("merge_report_sets: location dimensionality differs");
  detail::LocationTable table;
  for (int i = 0; i < a.num_locations(); ++i) table.intern(a.locations.row(i).transpose());
  ReportSet out;
  out.entries = a.entries;
  for (const Report& e : b.entries) {
    Report m = e;
    m.location = table.intern(b.locations.row(e.location).transpose());
    out.entries.push_back(m);
  }
  out.locations = table.matrix();
  out.num_sources = std::max(a.num_sources, b.num_sources);
  out.num_labels = std::max(a.num_labels, b.num_labels);
  out.validate();
  return out;
}

/// Model hyperparameters. alpha0 holds one J x L matrix per source; a single
/// entry is broadcast to every source at fit time.
struct ModelConfig {
  int num_classes = 2;
  int num_labels = 0;  // 0 means "same as num_classes"
  std::vector<Eigen::MatrixXd> alpha0;
  Eigen::VectorXd nu0;         // class-proportion prior, used by the IBCC baseline
  Eigen::VectorXd prior_mean;  // per-class constant GP mean, default zero
  double length_scale = 20.0;
  double a0 = 1.0;
  double b0 = 1.0;
  int max_iterations = 200;
  double convergence_tol = 0.0;  // 0 means "auto": 1e-3 * num_locations
  std::uint64_t rng_seed = 0;

  int labels() const { return num_labels > 0 ? num_labels : num_classes; }

  Eigen::VectorXd resolved_nu0() const {
    if (nu0.size() == 0) return Eigen::VectorXd::Ones(num_classes);
    return nu0;
  }

  Eigen::VectorXd resolved_prior_mean() const {
    if (prior_mean.size() == 0) return Eigen::VectorXd::Zero(num_classes);
    return prior_mean;
  }

  /// Confusion prior for source s out of S, after broadcasting. An empty
  /// alpha0 falls back to the weak diag-2 / off-diagonal-1 default.
  Eigen::MatrixXd alpha0_for(int s, int num_sources) const {
    if (alpha0.empty()) return uniform_alpha0(num_classes, labels(), 2.0, 1.0).front();
    if (alpha0.size() != 1 && static_cast<int>(alpha0.size()) != num_sources)
      throw std::invalid_argument("ModelConfig: alpha0 must have 1 or num_sources entries");
    const Eigen::MatrixXd& m = alpha0.size() == 1 ? alpha0.front() : alpha0.at(s);
    if (m.rows() != num_classes || m.cols() != labels())
      throw std::invalid_argument("ModelConfig: alpha0 matrices must be J x L");
    if (!(m.array() > 0.0).all())
      throw std::invalid_argument("ModelConfig: alpha0 entries must be positive");
    return m;
  }

  std::vector<Eigen::MatrixXd> resolved_alpha0() const {
    if (alpha0.empty()) return uniform_alpha0(num_classes, labels(), 2.0, 1.0);
    return alpha0;
  }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes >= 2 required");
    if (labels() < 2) throw std::invalid_argument("ModelConfig: num_labels >= 2 required");
    if (!(length_scale > 0.0)) throw std::invalid_argument("ModelConfig: length_scale > 0 required");
    if (!(a0 > 0.0) || !(b0 > 0.0)) throw std::invalid_argument("ModelConfig: a0, b0 > 0 required");
    if (max_iterations < 1) throw std::invalid_argument("ModelConfig: max_iterations >= 1 required");
    if (convergence_tol < 0.0)
      throw std::invalid_argument("ModelConfig: convergence_tol must be >= 0");
    const Eigen::VectorXd nu = resolved_nu0();
    if (nu.size() != num_classes || !(nu.array() > 0.0).all())
      throw std::invalid_argument("ModelConfig: nu0 must be J positive reals");
    if (resolved_prior_mean().size() != num_classes)
      throw std::invalid_argument("ModelConfig: prior_mean must have one entry per class");
  }

  /// Uniform diagonal/off-diagonal confusion prior shared by all sources.
  static std::vector<Eigen::MatrixXd> uniform_alpha0(int num_classes, int num_labels, double diag,
                                                     double offdiag) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(num_classes, num_labels, offdiag);
    for (int j = 0; j < std::min(num_classes, num_labels); ++j) m(j, j) = diag;
    return {m};
  }
};

}  // namespace heatmapbcc
