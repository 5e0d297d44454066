#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/baselines.hpp"
#include "heatmapbcc/core.hpp"
#include "heatmapbcc/errors.hpp"
#include "heatmapbcc/evaluation.hpp"
#include "heatmapbcc/model.hpp"
#include "heatmapbcc/synthetic.hpp"

namespace heatmapbcc {
namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  if (t.empty()) throw ParseError(where + ": empty number");
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) throw ParseError(where + ": bad number '" + t + "'");
  return v;
}

inline long long parse_int(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  if (t.empty()) throw ParseError(where + ": empty integer");
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) throw ParseError(where + ": bad integer '" + t + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  if (t.empty() || t[0] == '-') throw ParseError(where + ": bad unsigned integer '" + t + "'");
  char* end = nullptr;
  const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) throw ParseError(where + ": bad unsigned integer '" + t + "'");
  return v;
}

inline std::vector<double> parse_double_list(const std::string& value, const std::string& where) {
  std::vector<double> out;
  for (const std::string& tok : split(value, ',')) out.push_back(parse_double(tok, where));
  return out;
}

/// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Exact hexadecimal form, for state snapshots.
inline std::string format_hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

inline void finish_output(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Report files: `x,y,source,label` with a mandatory header.
// ---------------------------------------------------------------------------

inline void write_reports_csv(const std::string& path, const std::vector<RawReport>& raw) {
  std::ofstream out = detail::open_output(path);
  out << "x,y,source,label\n";
  for (const RawReport& r : raw) {
    if (r.coords.size() != 2)
      throw std::invalid_argument("write_reports_csv: reports must have 2-D coordinates");
    out << detail::format_double(r.coords[0]) << ',' << detail::format_double(r.coords[1]) << ','
        << r.source_id << ',' << r.label << '\n';
  }
  detail::finish_output(out, path);
}

inline std::vector<RawReport> read_reports_csv(const std::string& path) {
  std::ifstream in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
  {
    const std::vector<std::string> head = detail::split(line, ',');
    if (head.size() != 4 || detail::trim(head[0]) != "x" || detail::trim(head[1]) != "y" ||
        detail::trim(head[2]) != "source" || detail::trim(head[3]) != "label")
      throw ParseError(path + ":1: expected header 'x,y,source,label'");
  }
  std::vector<RawReport> raw;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const std::vector<std::string> f = detail::split(line, ',');
    if (f.size() != 4) throw ParseError(where + ": expected 4 fields, got " +
                                        std::to_string(f.size()));
    RawReport r;
    r.coords.resize(2);
    r.coords[0] = detail::parse_double(f[0], where);
    r.coords[1] = detail::parse_double(f[1], where);
    const long long src = detail::parse_int(f[2], where);
    const long long lab = detail::parse_int(f[3], where);
    if (src < 0) throw ParseError(where + ": source must be >= 0");
    if (lab < 1) throw ParseError(where + ": label must be >= 1");
    r.source_id = static_cast<int>(src);
    r.label = static_cast<int>(lab);
    raw.push_back(std::move(r));
  }
  return raw;
}

// ---------------------------------------------------------------------------
// Model configuration: `key = value` lines, `#` comments.
// ---------------------------------------------------------------------------

inline ModelConfig parse_config(std::istream& in, const std::string& name = "<config>",
                                ModelConfig base = {}) {
  ModelConfig config = std::move(base);
  bool saw_alpha = false;
  double alpha_diag = 2.0, alpha_offdiag = 1.0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "num_classes") {
      config.num_classes = static_cast<int>(detail::parse_int(value, where));
    } else if (key == "num_labels") {
      config.num_labels = static_cast<int>(detail::parse_int(value, where));
    } else if (key == "length_scale") {
      config.length_scale = detail::parse_double(value, where);
    } else if (key == "a0") {
      config.a0 = detail::parse_double(value, where);
    } else if (key == "b0") {
      config.b0 = detail::parse_double(value, where);
    } else if (key == "max_iterations") {
      config.max_iterations = static_cast<int>(detail::parse_int(value, where));
    } else if (key == "convergence_tol") {
      config.convergence_tol = detail::parse_double(value, where);
    } else if (key == "rng_seed") {
      config.rng_seed = detail::parse_uint(value, where);
    } else if (key == "alpha0_diag") {
      alpha_diag = detail::parse_double(value, where);
      saw_alpha = true;
    } else if (key == "alpha0_offdiag") {
      alpha_offdiag = detail::parse_double(value, where);
      saw_alpha = true;
    } else if (key == "nu0") {
      const std::vector<double> v = detail::parse_double_list(value, where);
      config.nu0 = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
    } else if (key == "prior_mean") {
      const std::vector<double> v = detail::parse_double_list(value, where);
      config.prior_mean = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
    } else {
      throw ParseError(where + ": unknown key '" + key + "'");
    }
  }
  if (saw_alpha || config.alpha0.empty())
    config.alpha0 =
        ModelConfig::uniform_alpha0(config.num_classes, config.labels(), alpha_diag, alpha_offdiag);
  return config;
}

inline ModelConfig load_config(const std::string& path, ModelConfig base = {}) {
  std::ifstream in = detail::open_input(path);
  return parse_config(in, path, std::move(base));
}

// ---------------------------------------------------------------------------
// Fit-state snapshots: tagged token stream, doubles in exact hexadecimal.
// ---------------------------------------------------------------------------

namespace detail {

class TokenReader {
 public:
  TokenReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  std::string next() {
    std::string tok;
    if (!(in_ >> tok)) throw ParseError(name_ + ": unexpected end of state file");
    return tok;
  }
  void expect(const std::string& tag) {
    const std::string tok = next();
    if (tok != tag)
      throw ParseError(name_ + ": expected section '" + tag + "', found '" + tok + "'");
  }
  double real() {
    const std::string tok = next();
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size())
      throw ParseError(name_ + ": bad real token '" + tok + "'");
    return v;
  }
  long long integer() { return parse_int(next(), name_); }
  std::uint64_t unsigned_integer() { return parse_uint(next(), name_); }

  Eigen::MatrixXd matrix(int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = real();
    return m;
  }
  Eigen::VectorXd vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = real();
    return v;
  }

 private:
  std::istream& in_;
  std::string name_;
};

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out << (j ? " " : "") << format_hex(m(i, j));
    out << '\n';
  }
}

inline int checked_count(long long v, long long lo, long long hi, const std::string& what) {
  if (v < lo || v > hi) throw ParseError("state file: implausible " + what);
  return static_cast<int>(v);
}

}  // namespace detail

inline void save_state(std::ostream& out, const FitState& state) {
  const int n = state.reports.num_locations();
  const int d = static_cast<int>(state.reports.locations.cols());
  const int num_classes = state.config.num_classes;
  const int num_labels = state.config.labels();
  out << "heatmapbcc-state 1\n";
  out << "config " << num_classes << ' ' << num_labels << ' '
      << detail::format_hex(state.config.length_scale) << ' '
      << detail::format_hex(state.config.a0) << ' ' << detail::format_hex(state.config.b0) << ' '
      << state.config.max_iterations << ' '
      << detail::format_hex(state.config.convergence_tol) << ' ' << state.config.rng_seed << '\n';
  out << "prior_mean\n";
  detail::write_matrix(out, state.config.resolved_prior_mean().transpose());
  out << "nu0\n";
  detail::write_matrix(out, state.config.resolved_nu0().transpose());
  out << "alpha0 " << state.config.alpha0.size() << '\n';
  for (const Eigen::MatrixXd& a : state.config.alpha0) detail::write_matrix(out, a);
  out << "length_scale " << detail::format_hex(state.length_scale) << '\n';
  out << "reports " << n << ' ' << d << ' ' << state.reports.num_sources << ' '
      << state.reports.num_labels << ' ' << state.reports.entries.size() << '\n';
  out << "locations\n";
  detail::write_matrix(out, state.reports.locations);
  out << "entries\n";
  for (const Report& e : state.reports.entries)
    out << e.location << ' ' << e.source_id << ' ' << e.label << '\n';
  out << "responsibilities\n";
  detail::write_matrix(out, state.responsibilities);
  out << "confusion " << state.confusion.size() << '\n';
  for (const ConfusionFactor& c : state.confusion) {
    detail::write_matrix(out, c.alpha0);
    detail::write_matrix(out, c.alpha);
  }
  out << "noise_prior\n";
  for (const BetaNoiseParams& p : state.noise_prior)
    out << detail::format_hex(p.nu_j) << ' ' << detail::format_hex(p.nu_not_j) << '\n';
  out << "inv_scale\n";
  for (const InverseScaleFactor& g : state.inv_scale)
    out << detail::format_hex(g.a) << ' ' << detail::format_hex(g.b) << '\n';
  out << "latent\n";
  for (const LatentFactor& l : state.latent) {
    detail::write_matrix(out, l.mu.transpose());
    detail::write_matrix(out, l.f_hat.transpose());
    detail::write_matrix(out, l.g_diag.transpose());
    detail::write_matrix(out, l.q_diag.transpose());
    detail::write_matrix(out, l.sigma);
  }
  out << "lower_bounds " << state.lower_bounds.size() << '\n';
  for (double v : state.lower_bounds) out << detail::format_hex(v) << '\n';
  out << "converged " << (state.converged ? 1 : 0) << '\n';
}

inline void save_state(const std::string& path, const FitState& state) {
  std::ofstream out = detail::open_output(path);
  save_state(out, state);
  detail::finish_output(out, path);
}

inline FitState load_state(std::istream& in, const std::string& name = "<state>") {
  detail::TokenReader r(in, name);
  r.expect("heatmapbcc-state");
  if (r.integer() != 1) throw ParseError(name + ": unsupported state version");
  FitState state;
  r.expect("config");
  state.config.num_classes = detail::checked_count(r.integer(), 2, 1000, "class count");
  const int num_labels = detail::checked_count(r.integer(), 2, 1000, "label count");
  state.config.num_labels = num_labels;
  state.config.length_scale = r.real();
  state.config.a0 = r.real();
  state.config.b0 = r.real();
  state.config.max_iterations = detail::checked_count(r.integer(), 1, 1000000, "max iterations");
  state.config.convergence_tol = r.real();
  state.config.rng_seed = r.unsigned_integer();
  const int num_classes = state.config.num_classes;
  r.expect("prior_mean");
  state.config.prior_mean = r.matrix(1, num_classes).transpose();
  r.expect("nu0");
  state.config.nu0 = r.matrix(1, num_classes).transpose();
  r.expect("alpha0");
  const int n_alpha = detail::checked_count(r.integer(), 1, 1000000, "alpha0 count");
  state.config.alpha0.resize(n_alpha);
  for (int i = 0; i < n_alpha; ++i) state.config.alpha0[i] = r.matrix(num_classes, num_labels);
  r.expect("length_scale");
  state.length_scale = r.real();
  r.expect("reports");
  const int n = detail::checked_count(r.integer(), 0, 10000000, "location count");
  const int d = detail::checked_count(r.integer(), 1, 1000, "location dimension");
  state.reports.num_sources = detail::checked_count(r.integer(), 1, 10000000, "source count");
  state.reports.num_labels = detail::checked_count(r.integer(), 2, 1000, "report label count");
  const int n_entries = detail::checked_count(r.integer(), 0, 100000000, "report count");
  r.expect("locations");
  state.reports.locations = r.matrix(n, d);
  r.expect("entries");
  state.reports.entries.resize(n_entries);
  for (Report& e : state.reports.entries) {
    e.location = detail::checked_count(r.integer(), 0, n - 1, "entry location");
    e.source_id = detail::checked_count(r.integer(), 0, state.reports.num_sources - 1,
                                        "entry source");
    e.label = detail::checked_count(r.integer(), 1, state.reports.num_labels, "entry label");
  }
  r.expect("responsibilities");
  state.responsibilities = r.matrix(n, num_classes);
  r.expect("confusion");
  const int n_conf = detail::checked_count(r.integer(), 0, 10000000, "confusion count");
  state.confusion.resize(n_conf);
  for (ConfusionFactor& c : state.confusion) {
    c.alpha0 = r.matrix(num_classes, num_labels);
    c.alpha = r.matrix(num_classes, num_labels);
  }
  r.expect("noise_prior");
  state.noise_prior.resize(num_classes);
  for (BetaNoiseParams& p : state.noise_prior) {
    p.nu_j = r.real();
    p.nu_not_j = r.real();
  }
  r.expect("inv_scale");
  state.inv_scale.resize(num_classes);
  for (InverseScaleFactor& g : state.inv_scale) {
    g.a = r.real();
    g.b = r.real();
  }
  r.expect("latent");
  state.latent.resize(num_classes);
  for (LatentFactor& l : state.latent) {
    l.mu = r.matrix(1, n).transpose();
    l.f_hat = r.matrix(1, n).transpose();
    l.g_diag = r.matrix(1, n).transpose();
    l.q_diag = r.matrix(1, n).transpose();
    l.sigma = r.matrix(n, n);
  }
  r.expect("lower_bounds");
  const int n_bounds = detail::checked_count(r.integer(), 0, 10000000, "bound count");
  state.lower_bounds.resize(n_bounds);
  for (double& v : state.lower_bounds) v = r.real();
  r.expect("converged");
  state.converged = r.integer() != 0;
  state.config.validate();
  state.reports.validate();
  return state;
}

inline FitState load_state(const std::string& path) {
  std::ifstream in = detail::open_input(path);
  return load_state(in, path);
}

// ---------------------------------------------------------------------------
// Heatmap artifacts.
// ---------------------------------------------------------------------------

inline void write_heatmap_csv(const std::string& path, const HeatmapGrid& hm) {
  const int num_classes = static_cast<int>(hm.state_probs.cols());
  std::ofstream out = detail::open_output(path);
  out << "x,y";
  for (int j = 1; j <= num_classes; ++j) out << ",prob_" << j;
  for (int j = 1; j <= num_classes; ++j) out << ",rho_" << j;
  for (int j = 1; j <= num_classes; ++j) out << ",latent_mean_" << j;
  for (int j = 1; j <= num_classes; ++j) out << ",latent_var_" << j;
  out << '\n';
  const Eigen::MatrixXd pts = grid_points(hm.grid);
  for (int c = 0; c < pts.rows(); ++c) {
    out << detail::format_double(pts(c, 0)) << ',' << detail::format_double(pts(c, 1));
    for (int j = 0; j < num_classes; ++j) out << ',' << detail::format_double(hm.state_probs(c, j));
    for (int j = 0; j < num_classes; ++j) out << ',' << detail::format_double(hm.rho_mean(c, j));
    for (int j = 0; j < num_classes; ++j)
      out << ',' << detail::format_double(hm.latent_mean(c, j));
    for (int j = 0; j < num_classes; ++j) out << ',' << detail::format_double(hm.latent_var(c, j));
    out << '\n';
  }
  detail::finish_output(out, path);
}

/// Binary portable pixmap with a fixed blue -> white -> orange ramp over
/// [0, 1]. The top image row is the grid row farthest from the origin.
inline void write_heatmap_ppm(const std::string& path, const GridSpec& grid,
                              const Eigen::VectorXd& values) {
  grid.validate();
  if (values.size() != grid.num_cells())
    throw std::invalid_argument("write_heatmap_ppm: one value per grid cell required");
  static constexpr int kStops[3][3] = {{33, 102, 172}, {247, 247, 247}, {230, 97, 1}};
  std::ofstream out = detail::open_output(path, /*binary=*/true);
  out << "P6\n" << grid.width << ' ' << grid.height << "\n255\n";
  std::string row(static_cast<std::size_t>(grid.width) * 3, '\0');
  for (int iy = grid.height - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < grid.width; ++ix) {
      const double p = std::clamp(values[iy * grid.width + ix], 0.0, 1.0);
      const int base = p < 0.5 ? 0 : 1;
      const double t = p < 0.5 ? p * 2.0 : (p - 0.5) * 2.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = kStops[base][ch] + t * (kStops[base + 1][ch] - kStops[base][ch]);
        row[static_cast<std::size_t>(ix) * 3 + ch] = static_cast<char>(
            static_cast<unsigned char>(std::lround(v)));
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  detail::finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Confusion, ground truth and benchmark tables.
// ---------------------------------------------------------------------------

inline void write_confusion_csv(const std::string& path,
                                const std::vector<ConfusionFactor>& confusion) {
  std::ofstream out = detail::open_output(path);
  out << "source_id,true_class,label,alpha,posterior_mean\n";
  for (std::size_t s = 0; s < confusion.size(); ++s) {
    const Eigen::MatrixXd mean = confusion[s].posterior_mean();
    for (int j = 0; j < mean.rows(); ++j)
      for (int l = 0; l < mean.cols(); ++l)
        out << s << ',' << j + 1 << ',' << l + 1 << ','
            << detail::format_double(confusion[s].alpha(j, l)) << ','
            << detail::format_double(mean(j, l)) << '\n';
  }
  detail::finish_output(out, path);
}

inline void write_true_confusion_csv(const std::string& path,
                                     const std::vector<Eigen::MatrixXd>& confusions) {
  std::ofstream out = detail::open_output(path);
  out << "source,true_class,label,probability\n";
  for (std::size_t s = 0; s < confusions.size(); ++s)
    for (int j = 0; j < confusions[s].rows(); ++j)
      for (int l = 0; l < confusions[s].cols(); ++l)
        out << s << ',' << j + 1 << ',' << l + 1 << ','
            << detail::format_double(confusions[s](j, l)) << '\n';
  detail::finish_output(out, path);
}

inline void write_ground_truth_csv(const std::string& path, const GridSpec& grid,
                                   const GroundTruth& truth) {
  if (truth.t.size() != grid.num_cells())
    throw std::invalid_argument("write_ground_truth_csv: truth does not match grid");
  std::ofstream out = detail::open_output(path);
  out << "x,y,f,rho,t\n";
  const Eigen::MatrixXd pts = grid_points(grid);
  for (int c = 0; c < pts.rows(); ++c)
    out << detail::format_double(pts(c, 0)) << ',' << detail::format_double(pts(c, 1)) << ','
        << detail::format_double(truth.f[c]) << ',' << detail::format_double(truth.rho[c]) << ','
        << truth.t[c] << '\n';
  detail::finish_output(out, path);
}

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out = detail::open_output(path);
  out << "method,seed,n_labels,auc,cross_entropy,nlpd\n";
  for (const ResultRow& r : rows)
    out << method_name(r.method) << ',' << r.seed << ',' << r.n_labels << ','
        << detail::format_double(r.auc) << ',' << detail::format_double(r.cross_entropy) << ','
        << detail::format_double(r.nlpd) << '\n';
  detail::finish_output(out, path);
}

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out = detail::open_output(path);
  out << "method,n_labels,auc_median,auc_q25,auc_q75,ce_median,ce_q25,ce_q75,"
         "nlpd_median,nlpd_q25,nlpd_q75,auc_improvement_median,ce_improvement_median,"
         "nlpd_improvement_median\n";
  for (const SummaryRow& r : rows) {
    out << method_name(r.method) << ',' << r.n_labels;
    for (double v : {r.auc_median, r.auc_q25, r.auc_q75, r.ce_median, r.ce_q25, r.ce_q75,
                     r.nlpd_median, r.nlpd_q25, r.nlpd_q75, r.auc_improvement_median,
                     r.ce_improvement_median, r.nlpd_improvement_median})
      out << ',' << detail::format_double(v);
    out << '\n';
  }
  detail::finish_output(out, path);
}

}  // namespace heatmapbcc
