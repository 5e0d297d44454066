#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "heatmapbcc/confusion.hpp"
#include "heatmapbcc/core.hpp"
#include "heatmapbcc/rng.hpp"

using namespace heatmapbcc;

namespace {

ReportSet tiny_reports(std::vector<Report> entries, int n_locations, int sources, int labels) {
  ReportSet set;
  set.locations = Eigen::MatrixXd::Random(n_locations, 2);
  set.entries = std::move(entries);
  set.num_sources = sources;
  set.num_labels = labels;
  set.validate();
  return set;
}

}  // namespace

TEST_CASE("update_confusion accumulates weighted counts", "[confusion]") {
  Eigen::MatrixXd prior(2, 2);
  prior << 2.0, 1.0, 1.0, 2.0;

  SECTION("no reports leaves the prior untouched") {
    const ReportSet set = tiny_reports({}, 1, 1, 2);
    const Eigen::MatrixXd r = Eigen::MatrixXd::Constant(1, 2, 0.5);
    const auto factors = update_confusion({prior}, r, set);
    REQUIRE(factors.size() == 1);
    CHECK(factors[0].alpha == prior);
    CHECK(factors[0].alpha0 == prior);
  }

  SECTION("hard counts add whole units") {
    const ReportSet set =
        tiny_reports({{0, 0, 1}, {1, 0, 1}, {2, 0, 1}}, 3, 1, 2);
    Eigen::MatrixXd r(3, 2);
    r << 1.0, 0.0, 1.0, 0.0, 1.0, 0.0;  // all three locations surely class 1
    const auto factors = update_confusion({prior}, r, set);
    CHECK(factors[0].alpha(0, 0) == 5.0);
    CHECK(factors[0].alpha(0, 1) == 1.0);
    CHECK(factors[0].alpha(1, 0) == 1.0);  // class 2 absorbed zero weight
    CHECK(factors[0].alpha(1, 1) == 2.0);
  }

  SECTION("fractional responsibilities add fractional pseudo-counts") {
    const ReportSet set = tiny_reports({{0, 0, 2}}, 1, 1, 2);
    Eigen::MatrixXd r(1, 2);
    r << 0.25, 0.75;
    const auto factors = update_confusion({prior}, r, set);
    CHECK(factors[0].alpha(0, 1) == 1.25);
    CHECK(factors[0].alpha(1, 1) == 2.75);
    CHECK(factors[0].alpha(0, 0) == 2.0);
  }
}

TEST_CASE("update_confusion is order invariant and validates input", "[confusion]") {
  Eigen::MatrixXd prior(2, 2);
  prior << 2.0, 1.0, 1.0, 2.0;
  std::vector<Report> entries = {{0, 0, 1}, {1, 0, 2}, {0, 1, 2}, {1, 1, 1}, {0, 0, 2}};
  Eigen::MatrixXd r(2, 2);
  r << 0.3, 0.7, 0.9, 0.1;

  const auto base = update_confusion({prior, prior}, r, tiny_reports(entries, 2, 2, 2));
  std::mt19937 shuffler(99);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(entries.begin(), entries.end(), shuffler);
    const auto shuffled = update_confusion({prior, prior}, r, tiny_reports(entries, 2, 2, 2));
    for (int s = 0; s < 2; ++s)
      CHECK((shuffled[s].alpha - base[s].alpha).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Expected report mass per source: alpha - alpha0 sums to its report count.
  for (int s = 0; s < 2; ++s) {
    const double mass = (base[s].alpha - base[s].alpha0).sum();
    const double n_reports = std::count_if(entries.begin(), entries.end(),
                                           [&](const Report& e) { return e.source_id == s; });
    CHECK(std::abs(mass - n_reports) < 1e-9);
    CHECK(((base[s].alpha - base[s].alpha0).array() >= -1e-15).all());
  }

  Eigen::MatrixXd bad_r(2, 2);
  bad_r << 0.5, 0.6, 0.5, 0.5;
  CHECK_THROWS_AS(update_confusion({prior, prior}, bad_r, tiny_reports(entries, 2, 2, 2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(update_confusion({prior}, r, tiny_reports(entries, 2, 2, 2)),
                  std::invalid_argument);
  Eigen::MatrixXd negative = prior;
  negative(0, 0) = -1.0;
  CHECK_THROWS_AS(update_confusion({negative, prior}, r, tiny_reports(entries, 2, 2, 2)),
                  std::invalid_argument);
}

TEST_CASE("expected_log_confusion hits exact digamma differences", "[confusion]") {
  Eigen::MatrixXd uniform(1, 2);
  uniform << 1.0, 1.0;
  const Eigen::MatrixXd e_uniform = expected_log_confusion(uniform);
  CHECK(std::abs(e_uniform(0, 0) - (-1.0)) < 1e-12);
  CHECK(std::abs(e_uniform(0, 1) - (-1.0)) < 1e-12);

  Eigen::MatrixXd skewed(1, 2);
  skewed << 2.0, 1.0;
  const Eigen::MatrixXd e_skewed = expected_log_confusion(skewed);
  CHECK(std::abs(e_skewed(0, 0) - (-0.5)) < 1e-12);
  CHECK(std::abs(e_skewed(0, 1) - (-1.5)) < 1e-12);

  Eigen::MatrixXd strong(1, 2);
  strong << 10.0, 1.0;
  const Eigen::MatrixXd e_strong = expected_log_confusion(strong);
  CHECK(std::isfinite(e_strong(0, 0)));
  CHECK(e_strong(0, 0) > e_strong(0, 1));
  CHECK(std::abs(e_strong(0, 0) - (-0.1)) < 1e-12);                 // psi(10) - psi(11)
  CHECK(std::abs(e_strong(0, 1) - (-2.9289682539682538)) < 1e-12);  // psi(1) - psi(11)

  CHECK_THROWS_AS(expected_log_confusion(Eigen::MatrixXd::Zero(1, 2)), std::invalid_argument);
}

TEST_CASE("expected_log_confusion rows show the Jensen gap and large-count limit", "[confusion]") {
  Rng rng(5, "jensen");
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd alpha(2, 3);
    for (int i = 0; i < alpha.size(); ++i) alpha.data()[i] = 0.5 + 8.0 * rng.uniform();
    const Eigen::MatrixXd e = expected_log_confusion(alpha);
    CHECK((e.array() < 0.0).all());
    for (int j = 0; j < 2; ++j) {
      CHECK(e.row(j).array().exp().sum() < 1.0);
      const Eigen::MatrixXd big = expected_log_confusion((alpha * 1000.0).eval());
      const Eigen::RowVectorXd normalized = alpha.row(j) / alpha.row(j).sum();
      CHECK((big.row(j).array().exp().matrix() - normalized).cwiseAbs().maxCoeff() < 1e-3);
    }
  }
}

TEST_CASE("posterior mean rows are probability vectors", "[confusion]") {
  ConfusionFactor factor;
  factor.alpha0 = Eigen::MatrixXd::Ones(2, 2);
  factor.alpha.resize(2, 2);
  factor.alpha << 5.0, 2.0, 1.0, 9.0;
  const Eigen::MatrixXd mean = factor.posterior_mean();
  CHECK(std::abs(mean.row(0).sum() - 1.0) < 1e-12);
  CHECK(std::abs(mean.row(1).sum() - 1.0) < 1e-12);
  CHECK(std::abs(mean(0, 0) - 5.0 / 7.0) < 1e-12);
  CHECK(std::abs(mean(1, 1) - 0.9) < 1e-12);
}
