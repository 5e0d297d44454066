#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "heatmapbcc/baselines.hpp"
#include "heatmapbcc/rng.hpp"
#include "support/oracles.hpp"

using namespace heatmapbcc;

namespace {

RawReport raw(double x, double y, int source, int label) {
  RawReport r;
  r.coords = Eigen::Vector2d(x, y);
  r.source_id = source;
  r.label = label;
  return r;
}

GridSpec square_grid(int cells_per_side, double cell_size) {
  GridSpec grid;
  grid.width = cells_per_side;
  grid.height = cells_per_side;
  grid.origin = Eigen::Vector2d(0.0, 0.0);
  grid.cell_dx = cell_size;
  grid.cell_dy = cell_size;
  return grid;
}

}  // namespace

TEST_CASE("ibcc_fit concentrates on the class favored by repeated reports", "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.alpha0 = {ModelConfig::uniform_alpha0(2, 2, 10.0, 1.0)};
  const ReportSet reports =
      make_report_set({raw(0, 0, 0, 2), raw(0, 0, 0, 2), raw(0, 0, 0, 2)});

  const IbccState state = ibcc_fit(reports, config);
  REQUIRE(state.converged);
  CHECK(state.iterations >= 3);
  CHECK(std::abs(state.responsibilities.row(0).sum() - 1.0) < 1e-9);
  CHECK(state.responsibilities(0, 1) > 0.9);

  // Exact collapsed posterior: p(t = j | c) proportional to
  // E[kappa_j] * DirMult(label counts | alpha0 row j), marginalizing the
  // confusion row analytically.
  Eigen::VectorXd counts(2);
  counts << 0.0, 3.0;
  Eigen::RowVectorXd row1(2), row2(2);
  row1 << 10.0, 1.0;
  row2 << 1.0, 10.0;
  const double m1 = std::exp(oracles::dirichlet_multinomial_log(counts, row1));
  const double m2 = std::exp(oracles::dirichlet_multinomial_log(counts, row2));
  const double oracle = m2 / (m1 + m2);
  CHECK(std::abs(oracle - 0.9954751131221719) < 1e-12);
  CHECK(std::abs(state.responsibilities(0, 1) - oracle) < 0.05);

  CHECK((state.kappa_params.array() >= 1.0).all());
  CHECK(state.kappa_params[1] > state.kappa_params[0]);
  CHECK(std::abs(state.kappa_mean().sum() - 1.0) < 1e-12);
}

TEST_CASE("ibcc_fit keeps perfectly balanced evidence at an even split", "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.alpha0 = {ModelConfig::uniform_alpha0(2, 2, 4.0, 1.0)};
  const ReportSet reports = make_report_set({raw(0, 0, 0, 1), raw(0, 0, 0, 2)});
  const IbccState state = ibcc_fit(reports, config);
  CHECK(state.converged);
  CHECK(state.responsibilities(0, 0) == 0.5);
  CHECK(state.responsibilities(0, 1) == 0.5);
}

TEST_CASE("ibcc_fit ignores geometry entirely", "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.alpha0 = {ModelConfig::uniform_alpha0(2, 2, 3.0, 1.0)};
  const ReportSet reports = make_report_set(
      {raw(0, 0, 0, 2), raw(3, 1, 0, 1), raw(7, 2, 1, 2), raw(0, 0, 1, 2), raw(9, 9, 0, 1)});
  ReportSet moved = reports;
  moved.locations.array() += 1234.5;  // same structure, different places
  const IbccState a = ibcc_fit(reports, config);
  const IbccState b = ibcc_fit(moved, config);
  CHECK(a.responsibilities == b.responsibilities);
  CHECK(a.kappa_params == b.kappa_params);
}

TEST_CASE("ibcc grid read-out matches exact locations and falls back to class proportions",
          "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.alpha0 = {ModelConfig::uniform_alpha0(2, 2, 10.0, 1.0)};
  Eigen::VectorXd nu0(2);
  nu0 << 2000.0, 1000.0;
  config.nu0 = nu0;

  const GridSpec grid = square_grid(2, 10.0);

  SECTION("with no reports every cell is the prior proportion") {
    ReportSet empty;  // no reports, but the source/label alphabet is declared
    empty.locations.resize(0, 2);
    empty.num_sources = 1;
    empty.num_labels = 2;
    const IbccState state = ibcc_fit(empty, config);
    CHECK(state.converged);
    const Eigen::MatrixXd out = ibcc_predict_grid(state, grid);
    REQUIRE(out.rows() == 4);
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(out(c, 0) - 2.0 / 3.0) < 1e-12);
      CHECK(std::abs(out(c, 1) - 1.0 / 3.0) < 1e-12);
    }
  }

  SECTION("a cell whose center carries reports shows that target's posterior") {
    const ReportSet reports =
        make_report_set({raw(5, 5, 0, 2), raw(5, 5, 0, 2), raw(5, 5, 0, 2)});
    const IbccState state = ibcc_fit(reports, config);
    const Eigen::MatrixXd out = ibcc_predict_grid(state, grid);
    CHECK(out(0, 1) == state.responsibilities(0, 1));
    for (const int c : {1, 2, 3}) CHECK(std::abs(out(c, 0) - 2.0 / 3.0) < 0.01);
  }

  SECTION("off-center locations are distinct targets: no interpolation to the cell") {
    // Three strong event reports inside cell 0 but away from its center. The
    // model has no spatial coupling, so the cell's own target is unobserved
    // and the read-out stays at the prior class proportion.
    const ReportSet reports =
        make_report_set({raw(3, 4, 0, 2), raw(3, 4, 0, 2), raw(6, 7, 0, 2)});
    const IbccState state = ibcc_fit(reports, config);
    CHECK(state.responsibilities(0, 1) > 0.5);
    const Eigen::MatrixXd out = ibcc_predict_grid(state, grid);
    for (int c = 0; c < 4; ++c) CHECK(std::abs(out(c, 1) - 1.0 / 3.0) < 0.01);
  }
}

TEST_CASE("kde_predict smooths weighted label masses", "[baselines]") {
  const GridSpec grid = square_grid(3, 10.0);

  SECTION("no reports gives the smoothed neutral rate everywhere") {
    ReportSet empty;
    const Eigen::VectorXd out = kde_predict(empty, grid, 5.0);
    REQUIRE(out.size() == 9);
    CHECK((out.array() == 0.5).all());
  }

  SECTION("a single event report raises its own cell to 2/3") {
    const Eigen::Vector2d c = grid.center(0, 0);
    const ReportSet reports = make_report_set({raw(c.x(), c.y(), 0, 2)});
    const Eigen::VectorXd out = kde_predict(reports, grid, 2.0);
    CHECK(out[0] == 2.0 / 3.0);
    // The opposite corner is many bandwidths away and stays neutral.
    CHECK(std::abs(out[8] - 0.5) < 1e-6);
    CHECK((out.array() > 0.0).all());
    CHECK((out.array() < 1.0).all());
  }

  SECTION("balanced labels at one point cancel exactly") {
    const Eigen::Vector2d c = grid.center(1, 1);
    const ReportSet reports =
        make_report_set({raw(c.x(), c.y(), 0, 2), raw(c.x(), c.y(), 0, 1)});
    const Eigen::VectorXd out = kde_predict(reports, grid, 3.0);
    CHECK(out[4] == 0.5);
  }

  SECTION("the event label is configurable and the bandwidth validated") {
    const Eigen::Vector2d c = grid.center(0, 0);
    const ReportSet reports = make_report_set({raw(c.x(), c.y(), 0, 1)});
    CHECK(kde_predict(reports, grid, 2.0, 1)[0] == 2.0 / 3.0);
    CHECK_THROWS_AS(kde_predict(reports, grid, 0.0), std::invalid_argument);
  }
}

TEST_CASE("gp_only_fit spreads label frequencies spatially", "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.length_scale = 10.0;
  const GridSpec grid = square_grid(3, 10.0);

  SECTION("label_frequencies counts in-range labels and stays uniform otherwise") {
    ReportSet reports = make_report_set(
        {raw(0, 0, 0, 2), raw(0, 0, 0, 2), raw(0, 0, 0, 1), raw(5, 5, 0, 3)});
    const Eigen::MatrixXd freq = label_frequencies(reports, 2);
    CHECK(std::abs(freq(0, 1) - 2.0 / 3.0) < 1e-12);
    CHECK(freq(1, 0) == 0.5);  // only an out-of-range label at location 1
  }

  SECTION("agreeing reports lift the event probability nearby") {
    std::vector<RawReport> raws;
    for (int i = 0; i < 5; ++i) raws.push_back(raw(4.9, 5.1, 0, 2));
    const SoftGpState state = gp_only_fit(make_report_set(raws), config);
    CHECK(state.converged);
    const HeatmapGrid heat = soft_gp_predict(state, grid, 1000, 7);
    const int near = grid.cell_index(4.9, 5.1);
    const int far = grid.cell_index(25.0, 25.0);
    CHECK(heat.state_probs(near, 1) > 0.6);
    CHECK(heat.state_probs(near, 1) > heat.state_probs(far, 1));
    CHECK(std::abs(heat.state_probs.row(near).sum() - 1.0) < 1e-9);
  }

  SECTION("contradicting reports at one spot stay near the prior") {
    const ReportSet reports =
        make_report_set({raw(14.9, 15.2, 0, 1), raw(14.9, 15.2, 0, 2)});
    const SoftGpState state = gp_only_fit(reports, config);
    const HeatmapGrid heat = soft_gp_predict(state, grid, 1000, 7);
    CHECK(std::abs(heat.state_probs(grid.cell_index(14.9, 15.2), 1) - 0.5) < 0.05);
  }

  SECTION("no reports reproduces the prior map") {
    ReportSet empty;
    const SoftGpState state = gp_only_fit(empty, config);
    CHECK(state.converged);
    const HeatmapGrid heat = soft_gp_predict(state, grid, 1000, 7);
    CHECK((heat.latent_mean.array() == 0.0).all());
    CHECK((heat.latent_var.array() == config.b0 / config.a0).all());
    CHECK((heat.state_probs.array() == 0.5).all());
    CHECK(std::abs(heat.rho_mean(0, 1) - 0.5) < 1e-12);
  }

  SECTION("soft label shape is validated") {
    CHECK_THROWS_AS(
        soft_gp_fit(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Constant(1, 2, 0.5), config),
        std::invalid_argument);
  }
}

TEST_CASE("near-perfect reporters make the full model agree with the plain GP",
          "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.length_scale = 8.0;
  ModelConfig trusted = config;
  trusted.alpha0 = {ModelConfig::uniform_alpha0(2, 2, 200.0, 1.0)};

  Rng rng(81, "agree");
  std::vector<RawReport> raws;
  for (int i = 0; i < 8; ++i) {
    const double x = 30.0 * rng.uniform();
    const double y = 30.0 * rng.uniform();
    raws.push_back(raw(x, y, 0, x + y < 30.0 ? 1 : 2));
  }
  const ReportSet reports = make_report_set(raws);
  const GridSpec grid = square_grid(3, 10.0);

  const FitState full = fit(reports, trusted);
  const SoftGpState plain = gp_only_fit(reports, config);
  const HeatmapGrid ha = predict(full, grid, 1500, 11);
  const HeatmapGrid hb = soft_gp_predict(plain, grid, 1500, 11);
  // Continuous report coordinates never sit on cell centers, so both maps are
  // pure latent read-outs and should nearly coincide.
  CHECK((ha.state_probs - hb.state_probs).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("ibcc_gp_fit pipes collapsed responsibilities into the GP", "[baselines]") {
  ModelConfig config;
  config.num_classes = 2;
  config.alpha0 = {ModelConfig::uniform_alpha0(2, 2, 2.0, 1.0)};
  config.length_scale = 10.0;
  const GridSpec grid = square_grid(3, 10.0);

  SECTION("a lone weak report nudges its neighbourhood, not the far field") {
    const ReportSet reports = make_report_set({raw(5.1, 4.8, 0, 2)});
    const SoftGpState state = ibcc_gp_fit(reports, config);
    const HeatmapGrid heat = soft_gp_predict(state, grid, 1000, 13);
    const double near = heat.state_probs(grid.cell_index(5.1, 4.8), 1);
    const double far = heat.state_probs(grid.cell_index(25.0, 25.0), 1);
    CHECK(near > 0.5);
    CHECK(near < 0.95);
    CHECK(std::abs(far - 0.5) < 0.05);
  }

  SECTION("no reports reproduces the prior map") {
    ReportSet empty;  // no reports, but the source/label alphabet is declared
    empty.locations.resize(0, 2);
    empty.num_sources = 1;
    empty.num_labels = 2;
    const SoftGpState state = ibcc_gp_fit(empty, config);
    const HeatmapGrid heat = soft_gp_predict(state, grid, 500, 13);
    CHECK((heat.state_probs.array() == 0.5).all());
  }
}

TEST_CASE("majority_vote picks the most frequent label per cell", "[baselines]") {
  const GridSpec grid = square_grid(2, 10.0);
  const Eigen::Vector2d a = grid.center(0, 0);
  const Eigen::Vector2d b = grid.center(1, 1);
  const ReportSet reports = make_report_set({
      raw(a.x(), a.y(), 0, 2), raw(a.x(), a.y(), 0, 2), raw(a.x(), a.y(), 0, 1),
      raw(b.x(), b.y(), 0, 1), raw(b.x(), b.y(), 0, 2),  // exact tie
  });
  const Eigen::VectorXi votes = majority_vote(reports, grid);
  REQUIRE(votes.size() == 4);
  CHECK(votes[0] == 2);
  CHECK(votes[3] == 1);  // ties resolve low
  CHECK(votes[1] == 1);  // empty cells resolve low
  CHECK(votes[2] == 1);

  ReportSet empty;
  CHECK((majority_vote(empty, grid).array() == 1).all());
}

TEST_CASE("nearest_neighbour scores the event fraction of the closest reports",
          "[baselines]") {
  const GridSpec grid = square_grid(1, 10.0);  // single cell centered at (5, 5)

  SECTION("labels vote in distance order") {
    const ReportSet reports = make_report_set({
        raw(5, 5, 0, 2), raw(5, 6, 0, 2), raw(5, 7, 0, 2),
        raw(5, 8, 0, 1), raw(5, 9, 0, 1), raw(5, 10, 0, 1), raw(5, 11, 0, 1),
    });
    CHECK(nearest_neighbour(reports, grid, 5)[0] == 0.6);
    CHECK(nearest_neighbour(reports, grid, 1)[0] == 1.0);
    CHECK(nearest_neighbour(reports, grid, 7)[0] == 3.0 / 7.0);
    CHECK(nearest_neighbour(reports, grid, 3, 1)[0] == 0.0);
  }

  SECTION("fewer reports than k uses them all") {
    const ReportSet reports = make_report_set({raw(1, 1, 0, 2), raw(9, 9, 0, 1)});
    CHECK(nearest_neighbour(reports, grid, 5)[0] == 0.5);
  }

  SECTION("distance ties keep report order") {
    const ReportSet reports = make_report_set({raw(5, 4, 0, 2), raw(5, 6, 0, 1)});
    CHECK(nearest_neighbour(reports, grid, 1)[0] == 1.0);
  }

  SECTION("degenerate inputs") {
    ReportSet empty;
    CHECK((nearest_neighbour(empty, grid, 5).array() == 0.0).all());
    const ReportSet reports = make_report_set({raw(5, 5, 0, 2)});
    CHECK_THROWS_AS(nearest_neighbour(reports, grid, 0), std::invalid_argument);
  }
}
