// Command-line surface: fit, predict, simulate, benchmark, export-confusion.
//
// Exit codes: 0 success; 1 parse/usage/file errors; 2 numerical failures;
// 3 fit did not converge (the state file is still written).

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "heatmapbcc/heatmapbcc.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct NonConvergence {};

heatmapbcc::ModelConfig default_config() {
  std::istringstream empty;
  return heatmapbcc::parse_config(empty);
}

struct FitFlags {
  bool optimize_length_scale = false;
  double length_scale_min = 1.0;
  double length_scale_max = 100.0;

  heatmapbcc::FitOptions options() const {
    heatmapbcc::FitOptions opt;
    opt.optimize_length_scale = optimize_length_scale;
    opt.length_scale_min = length_scale_min;
    opt.length_scale_max = length_scale_max;
    return opt;
  }
};

void add_fit_flags(CLI::App* cmd, FitFlags& flags) {
  cmd->add_flag("--optimize-length-scale", flags.optimize_length_scale,
                "Maximize the lower bound over the kernel length scale before the final fit");
  cmd->add_option("--length-scale-min", flags.length_scale_min,
                  "Lower end of the length-scale search bracket");
  cmd->add_option("--length-scale-max", flags.length_scale_max,
                  "Upper end of the length-scale search bracket");
}

struct GridFlags {
  int width = 0, height = 0;
  double origin_x = 0.0, origin_y = 0.0, cell_dx = 1.0, cell_dy = 1.0;

  heatmapbcc::GridSpec spec() const {
    return {width, height, Eigen::Vector2d(origin_x, origin_y), cell_dx, cell_dy};
  }
};

void add_grid_flags(CLI::App* cmd, GridFlags& grid) {
  cmd->add_option("--grid-width", grid.width, "Number of cells along x")->required();
  cmd->add_option("--grid-height", grid.height, "Number of cells along y")->required();
  cmd->add_option("--origin-x", grid.origin_x, "Grid origin x (default 0)");
  cmd->add_option("--origin-y", grid.origin_y, "Grid origin y (default 0)");
  cmd->add_option("--cell-dx", grid.cell_dx, "Cell width (default 1)");
  cmd->add_option("--cell-dy", grid.cell_dy, "Cell height (default 1)");
}

void add_scenario_flags(CLI::App* cmd, heatmapbcc::ScenarioSpec& spec, std::string& name) {
  cmd->add_option("--scenario", name, "Scenario: noisy, biased or continuous")->required();
  cmd->add_option("--grid-width", spec.grid_width, "Grid cells along x (default 20)");
  cmd->add_option("--grid-height", spec.grid_height, "Grid cells along y (default 20)");
  cmd->add_option("--length-scale", spec.length_scale,
                  "Length scale of the true surface (default 10)");
  cmd->add_option("--inverse-scale", spec.inverse_scale,
                  "Inverse scale of the true surface (default 1.2)");
  cmd->add_option("--n-reporters", spec.n_reporters, "Number of reporters (default 10)");
  cmd->add_option("--noisy-frac", spec.adversary_frac,
                  "Fraction of unreliable (noisy/biased) reporters (default 0.5)");
  cmd->add_option("--n-reports", spec.n_reports, "Number of reports to draw (default 800)");
}

std::vector<int> parse_schedule(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ','))
    out.push_back(static_cast<int>(heatmapbcc::detail::parse_int(tok, "--schedule")));
  if (out.empty()) throw heatmapbcc::ParseError("--schedule: empty list");
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{
      "Bayesian aggregation of unreliable geo-tagged reports into probability heatmaps"};
  app.require_subcommand(1);

  // --- fit -----------------------------------------------------------------
  auto* fit_cmd = app.add_subcommand(
      "fit", "Fit the model to a report file and write a state snapshot");
  std::string fit_reports, fit_config, fit_out;
  FitFlags fit_flags;
  fit_cmd->add_option("--reports", fit_reports, "Report CSV (x,y,source,label)")->required();
  fit_cmd->add_option("--config", fit_config, "Model configuration file (key = value lines)");
  fit_cmd->add_option("--out", fit_out, "Output state file")->required();
  add_fit_flags(fit_cmd, fit_flags);
  fit_cmd->callback([&] {
    const auto t0 = Clock::now();
    const std::vector<heatmapbcc::RawReport> raw = heatmapbcc::read_reports_csv(fit_reports);
    const heatmapbcc::ReportSet set = heatmapbcc::make_report_set(raw);
    heatmapbcc::ModelConfig config =
        fit_config.empty() ? default_config() : heatmapbcc::load_config(fit_config);
    const heatmapbcc::FitState state = heatmapbcc::fit(set, config, fit_flags.options());
    heatmapbcc::save_state(fit_out, state);
    std::printf("fit: %d reports at %d locations, %d iterations, converged=%s\n",
                static_cast<int>(set.entries.size()), set.num_locations(), state.iterations(),
                state.converged ? "yes" : "no");
    std::printf("fit: length_scale %.6g, final lower bound %.6f\n", state.length_scale,
                state.lower_bounds.back());
    std::printf("fit: wall time %.2f s\n", seconds_since(t0));
    if (!state.converged) throw NonConvergence{};
  });

  // --- predict ---------------------------------------------------------------
  auto* predict_cmd = app.add_subcommand(
      "predict", "Predict a posterior heatmap over a grid from a state snapshot");
  std::string predict_state, predict_prefix;
  GridFlags predict_grid;
  int predict_samples = 2000;
  std::uint64_t predict_seed = 0;
  bool predict_has_seed = false, predict_render = false;
  predict_cmd->add_option("--state", predict_state, "State file written by fit")->required();
  predict_cmd->add_option("--out-prefix", predict_prefix, "Prefix for output files")->required();
  add_grid_flags(predict_cmd, predict_grid);
  predict_cmd->add_option("--samples", predict_samples,
                          "Monte Carlo samples per cell for E[rho] (default 2000)");
  predict_cmd->add_option("--seed", predict_seed, "Sampling seed (default: the fit's seed)")
      ->each([&](const std::string&) { predict_has_seed = true; });
  predict_cmd->add_flag("--render", predict_render,
                        "Also write a PPM image of the event probability");
  predict_cmd->callback([&] {
    const auto t0 = Clock::now();
    const heatmapbcc::FitState state = heatmapbcc::load_state(predict_state);
    const heatmapbcc::GridSpec grid = predict_grid.spec();
    std::optional<std::uint64_t> seed;
    if (predict_has_seed) seed = predict_seed;
    const heatmapbcc::HeatmapGrid hm = heatmapbcc::predict(state, grid, predict_samples, seed);
    heatmapbcc::write_heatmap_csv(predict_prefix + "_probs.csv", hm);
    if (predict_render)
      heatmapbcc::write_heatmap_ppm(predict_prefix + "_probs.ppm", grid, hm.state_probs.col(1));
    std::printf("predict: %d cells, wall time %.2f s\n", grid.num_cells(), seconds_since(t0));
  });

  // --- simulate --------------------------------------------------------------
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Generate a synthetic scenario: ground truth, reporters and reports");
  heatmapbcc::ScenarioSpec sim_spec;
  std::string sim_scenario, sim_dir;
  sim_cmd->add_option("--seed", sim_spec.seed, "Scenario seed (default 1)");
  add_scenario_flags(sim_cmd, sim_spec, sim_scenario);
  sim_cmd->add_option("--out-dir", sim_dir, "Output directory")->required();
  sim_cmd->callback([&] {
    sim_spec.kind = heatmapbcc::scenario_from_name(sim_scenario);
    const heatmapbcc::ScenarioData data = heatmapbcc::build_scenario(sim_spec);
    std::filesystem::create_directories(sim_dir);
    const std::filesystem::path dir(sim_dir);
    heatmapbcc::write_reports_csv((dir / "reports.csv").string(), data.raw);
    heatmapbcc::write_ground_truth_csv((dir / "ground_truth.csv").string(), data.grid,
                                       data.truth);
    heatmapbcc::write_true_confusion_csv((dir / "true_confusion.csv").string(), data.confusions);
    std::printf("simulate: %s scenario, %zu reports over a %dx%d grid -> %s\n",
                heatmapbcc::scenario_name(sim_spec.kind), data.raw.size(), sim_spec.grid_width,
                sim_spec.grid_height, sim_dir.c_str());
  });

  // --- benchmark ---------------------------------------------------------------
  auto* bench_cmd = app.add_subcommand(
      "benchmark", "Run the incremental train/test comparison on synthetic scenarios");
  heatmapbcc::ScenarioSpec bench_spec;
  std::string bench_scenario, bench_methods = "heatmapbcc,ibcc,kde,gp,ibcc_gp,majority,knn";
  std::string bench_schedule = "100,200,400,800", bench_config, bench_out, bench_summary;
  int bench_seeds = 10;
  std::uint64_t bench_base_seed = 1;
  FitFlags bench_flags;
  add_scenario_flags(bench_cmd, bench_spec, bench_scenario);
  bench_cmd->add_option("--methods", bench_methods, "Comma-separated method list");
  bench_cmd->add_option("--schedule", bench_schedule, "Comma-separated subset sizes");
  bench_cmd->add_option("--seeds", bench_seeds, "Number of repetitions (default 10)");
  bench_cmd->add_option("--base-seed", bench_base_seed,
                        "First repetition seed; repetition i uses base+i (default 1)");
  bench_cmd->add_option("--config", bench_config, "Model configuration file");
  bench_cmd->add_option("--out", bench_out, "Result table CSV")->required();
  bench_cmd->add_option("--summary-out", bench_summary,
                        "Summary CSV (default: <out> with a _summary suffix)");
  add_fit_flags(bench_cmd, bench_flags);
  bench_cmd->callback([&] {
    const auto t0 = Clock::now();
    bench_spec.kind = heatmapbcc::scenario_from_name(bench_scenario);
    if (bench_seeds < 1) throw heatmapbcc::ParseError("--seeds must be >= 1");
    heatmapbcc::ExperimentSpec exp;
    exp.methods.clear();
    {
      std::istringstream in(bench_methods);
      std::string tok;
      while (std::getline(in, tok, ','))
        exp.methods.push_back(heatmapbcc::method_from_name(heatmapbcc::detail::trim(tok)));
      if (exp.methods.empty()) throw heatmapbcc::ParseError("--methods: empty list");
    }
    exp.schedule = parse_schedule(bench_schedule);
    exp.options = bench_flags.options();
    if (bench_config.empty()) {
      exp.config = default_config();
      exp.config.length_scale = bench_spec.length_scale;
    } else {
      exp.config = heatmapbcc::load_config(bench_config);
    }

    std::vector<heatmapbcc::ResultRow> rows;
    for (int i = 0; i < bench_seeds; ++i) {
      const std::uint64_t seed = bench_base_seed + static_cast<std::uint64_t>(i);
      heatmapbcc::ScenarioSpec s = bench_spec;
      s.seed = seed;
      const heatmapbcc::ScenarioData data = heatmapbcc::build_scenario(s);
      heatmapbcc::ExperimentSpec one = exp;
      one.seeds = {seed};
      const heatmapbcc::ExperimentResult res =
          heatmapbcc::incremental_experiment(data.raw, data.truth, data.grid, one);
      rows.insert(rows.end(), res.rows.begin(), res.rows.end());
      std::printf("benchmark: seed %llu done (%.2f s elapsed)\n",
                  static_cast<unsigned long long>(seed), seconds_since(t0));
      std::fflush(stdout);
    }
    heatmapbcc::write_results_csv(bench_out, rows);
    std::string summary_path = bench_summary;
    if (summary_path.empty()) {
      summary_path = bench_out;
      const std::string ext = ".csv";
      if (summary_path.size() > ext.size() &&
          summary_path.substr(summary_path.size() - ext.size()) == ext)
        summary_path.insert(summary_path.size() - ext.size(), "_summary");
      else
        summary_path += "_summary";
    }
    heatmapbcc::write_summary_csv(summary_path, heatmapbcc::summarize_results(rows));
    std::printf("benchmark: %zu result rows -> %s (summary: %s), wall time %.2f s\n", rows.size(),
                bench_out.c_str(), summary_path.c_str(), seconds_since(t0));
  });

  // --- export-confusion ------------------------------------------------------
  auto* conf_cmd = app.add_subcommand(
      "export-confusion", "Write posterior-mean confusion matrices from a state snapshot");
  std::string conf_state, conf_out;
  conf_cmd->add_option("--state", conf_state, "State file written by fit")->required();
  conf_cmd->add_option("--out", conf_out, "Output CSV")->required();
  conf_cmd->callback([&] {
    const heatmapbcc::FitState state = heatmapbcc::load_state(conf_state);
    heatmapbcc::write_confusion_csv(conf_out, state.confusion);
    std::printf("export-confusion: %zu sources -> %s\n", state.confusion.size(),
                conf_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NonConvergence&) {
    std::fprintf(stderr, "error: fit did not converge within max_iterations\n");
    return 3;
  } catch (const heatmapbcc::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  } catch (const heatmapbcc::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const heatmapbcc::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
