#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "dtr/error.hpp"
#include "dtr/simgen.hpp"
#include "dtr/surface.hpp"
#include "test_support.hpp"

namespace dtr {
namespace {

using test::le_regime;

EstimationSettings sim1_settings(const Panel& panel, std::uint64_t seed = 1) {
  EstimationSettings s;
  s.nuisance = default_nuisance(DgpSpec{}, panel);
  s.gaw = GawConfig{0.18, 0.5};
  s.baw.axes = default_window_axes(DgpKind::kSim1);
  s.baw.bootstrap_count = 20;
  s.seed = seed;
  return s;
}

std::vector<EstimatorSpec> specs(std::initializer_list<const char*> names) {
  std::vector<EstimatorSpec> out;
  for (const char* n : names) {
    out.push_back(EstimatorSpec::parse(n));
  }
  return out;
}

TEST(Grid, ValuesAndCells) {
  const auto psi1 = grid_values(150, 500, 5);
  const auto psi2 = grid_values(200, 600, 5);
  EXPECT_EQ(psi1.size(), 71u);
  EXPECT_EQ(psi2.size(), 81u);
  EXPECT_EQ(psi1.back(), 500.0);
  EXPECT_EQ(grid_cells({{"psi1", psi1}, {"psi2", psi2}}).size(), 5751u);
  const auto cells = grid_cells({{"a", {1, 2}}, {"b", {3, 4, 5}}});
  EXPECT_EQ(cells[0], (std::vector<double>{1, 3}));
  EXPECT_EQ(cells[1], (std::vector<double>{1, 4}));
  EXPECT_EQ(cells[3], (std::vector<double>{2, 3}));
  EXPECT_EQ(grid_values(0, 1, 0.1).size(), 11u);
  EXPECT_THROW((void)grid_values(1, 0, 0.5), Error);
}

TEST(Optimum, TieGoesToFirstCell) {
  const std::vector<std::vector<double>> cells{{1}, {2}, {3}};
  const auto opt = locate_optimum(cells, {5.0, 7.0, 7.0});
  ASSERT_TRUE(opt.has_value());
  EXPECT_EQ(opt->cell, 1u);
  EXPECT_FALSE(locate_optimum(cells, {std::nullopt, std::nullopt, std::nullopt}).has_value());
  EXPECT_EQ(locate_optimum(cells, {std::nullopt, 1.0, std::nullopt})->cell, 1u);
}

TEST(Optimum, InvariantUnderIncreasingTransform) {
  Rng rng(4);
  std::vector<std::vector<double>> cells;
  std::vector<std::optional<double>> values, transformed;
  for (int c = 0; c < 200; ++c) {
    cells.push_back({static_cast<double>(c)});
    const double v = rng.normal();
    values.push_back(v);
    transformed.push_back(std::exp(3 * v) + 10);
  }
  EXPECT_EQ(locate_optimum(cells, values)->cell, locate_optimum(cells, transformed)->cell);
}

TEST(Surface, CellsMatchStandaloneEstimates) {
  const auto panel = generate(DgpSpec{}, 500, 3);
  const auto settings = sim1_settings(panel);
  const auto est = specs({"nipw", "ngaw", "nbaw", "naipw", "nagaw", "abaw", "ipw"});
  const std::vector<GridAxis> axes{{"psi1", {300, 350}}, {"psi2", {400, 450}}};
  const auto surface = evaluate_surface(panel, default_regime(DgpKind::kSim1), axes, est, settings);
  ASSERT_EQ(surface.cells.size(), 4u);
  for (std::size_t c = 0; c < surface.cells.size(); ++c) {
    const auto regime = default_regime(DgpKind::kSim1).with_thresholds(surface.cells[c]);
    for (std::size_t e = 0; e < est.size(); ++e) {
      const auto& cell = surface.results[c][e];
      ASSERT_TRUE(cell.estimate.has_value()) << cell.message;
      const auto direct = estimate(panel, regime, est[e], settings);
      EXPECT_EQ(cell.estimate->value, direct.value) << est[e].name();
      EXPECT_EQ(cell.estimate->variance, direct.variance) << est[e].name();
    }
  }
}

TEST(Surface, SingleCellGrid) {
  const auto panel = generate(DgpSpec{}, 300, 4);
  const auto est = specs({"nipw", "ngaw"});
  const auto surface = evaluate_surface(panel, default_regime(DgpKind::kSim1), {{"psi1", {350}}, {"psi2", {450}}}, est,
                                        sim1_settings(panel));
  ASSERT_EQ(surface.results.size(), 1u);
  EXPECT_EQ(surface.results[0].size(), 2u);
  EXPECT_EQ(surface.optima[0]->cell, 0u);
}

TEST(Surface, IndependentOfThreadCount) {
  const auto panel = generate(DgpSpec{}, 400, 5);
  const auto est = specs({"nipw", "nbaw"});
  const auto axes = std::vector<GridAxis>{{"psi1", grid_values(250, 450, 50)}, {"psi2", grid_values(350, 550, 50)}};
  const auto a = evaluate_surface(panel, default_regime(DgpKind::kSim1), axes, est, sim1_settings(panel), 1);
  const auto b = evaluate_surface(panel, default_regime(DgpKind::kSim1), axes, est, sim1_settings(panel), 3);
  std::ostringstream sa, sb;
  write_surface_csv(sa, a);
  write_surface_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Surface, RefinementNeverLowersMaximum) {
  const auto panel = generate(DgpSpec{}, 600, 6);
  const auto est = specs({"nipw"});
  const auto base = default_regime(DgpKind::kSim1);
  const auto coarse =
      evaluate_surface(panel, base, {{"psi1", grid_values(200, 500, 100)}, {"psi2", grid_values(300, 600, 100)}}, est,
                       sim1_settings(panel));
  const auto fine = evaluate_surface(
      panel, base, {{"psi1", grid_values(200, 500, 50)}, {"psi2", grid_values(300, 600, 50)}}, est, sim1_settings(panel));
  EXPECT_GE(fine.optima[0]->value, coarse.optima[0]->value);
}

TEST(Surface, NoAdherersCellIsMarkedMissing) {
  // Nobody is treated, so a regime that treats everyone has no adherers.
  const auto panel = test::make_panel({{1, 2, 3, 4, 5, 6}}, {{0, 0, 0, 0, 0, 0}}, {1, 2, 3, 4, 5, 6});
  EstimationSettings s;
  s.nuisance.propensity = {FeatureSpec({Term::intercept()})};
  const auto surface = evaluate_surface(panel, le_regime({0}), {{"psi1", {0, 10}}}, specs({"nipw"}), s);
  ASSERT_TRUE(surface.results[0][0].estimate.has_value());
  EXPECT_FALSE(surface.results[1][0].estimate.has_value());
  EXPECT_EQ(surface.results[1][0].missing_reason, "NoAdherers");
  EXPECT_EQ(surface.optima[0]->cell, 0u);
  try {
    (void)estimate(panel, le_regime({10}), EstimatorSpec::parse("nipw"), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoAdherers);
  }
}

TEST(Surface, CsvIsLongFormat) {
  const auto panel = generate(DgpSpec{}, 300, 7);
  const auto surface = evaluate_surface(panel, default_regime(DgpKind::kSim1),
                                        {{"psi1", {300, 350, 400}}, {"psi2", {450, 500}}}, specs({"nipw", "ngaw"}),
                                        sim1_settings(panel));
  std::ostringstream out;
  write_surface_csv(out, surface);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "psi1,psi2,estimator,value,variance,ess,bias_bound,window_max,missing_reason");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    rows += line.empty() || line[0] == '#' ? 0 : 1;
  }
  EXPECT_EQ(rows, 12u);
}

TEST(Surface, Sim2LargeSampleArgmaxNearTruth) {
  DgpSpec spec;
  spec.kind = DgpKind::kSim2;
  const auto panel = generate(spec, 100000, 8);
  EstimationSettings s;
  s.nuisance = default_nuisance(spec, panel);
  // The value keeps rising slowly in psi2; (430, 80) is the optimum over psi2 <= 80.
  const std::vector<GridAxis> axes{{"psi1", grid_values(300, 550, 10)}, {"psi2", grid_values(40, 80, 5)}};
  const auto surface = evaluate_surface(panel, default_regime(DgpKind::kSim2), axes, specs({"nipw"}), s);
  const auto& opt = *surface.optima[0];
  EXPECT_LE(std::abs(opt.psi[0] - 430), 10.0);
  EXPECT_LE(std::abs(opt.psi[1] - 80), 5.0);
}

TEST(Thresholds, OneCellGridHasZeroSpread) {
  const auto panel = generate(DgpSpec{}, 300, 9);
  const auto boot = bootstrap_thresholds(panel, default_regime(DgpKind::kSim1), {{"psi1", {350}}, {"psi2", {450}}},
                                         EstimatorSpec::parse("nipw"), sim1_settings(panel), 10, 3);
  EXPECT_EQ(boot.argmax.size(), 10u);
  EXPECT_EQ(boot.dropped, 0u);
  for (const auto& s : boot.summary) {
    EXPECT_EQ(s.sd, 0.0);
    EXPECT_EQ(s.iqr, 0.0);
  }
  EXPECT_EQ(boot.summary[0].median, 350.0);
}

TEST(Thresholds, DeterministicAcrossThreads) {
  const auto panel = generate(DgpSpec{}, 400, 10);
  const std::vector<GridAxis> axes{{"psi1", grid_values(250, 450, 50)}, {"psi2", grid_values(350, 550, 50)}};
  const auto a = bootstrap_thresholds(panel, default_regime(DgpKind::kSim1), axes, EstimatorSpec::parse("ngaw"),
                                      sim1_settings(panel), 12, 5, 1);
  const auto b = bootstrap_thresholds(panel, default_regime(DgpKind::kSim1), axes, EstimatorSpec::parse("ngaw"),
                                      sim1_settings(panel), 12, 5, 3);
  EXPECT_EQ(a.argmax, b.argmax);
  EXPECT_LE(a.summary[0].ci_lower, a.summary[0].median);
  EXPECT_GE(a.summary[0].ci_upper, a.summary[0].median);
}

TEST(Thresholds, SummaryStatistics) {
  const std::vector<GridAxis> axes{{"psi1", {1, 2, 3, 4}}};
  const auto s = summarize_thresholds(axes, {{1}, {2}, {3}, {4}});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0].mean, 2.5);
  EXPECT_DOUBLE_EQ(s[0].median, 2.5);
  EXPECT_DOUBLE_EQ(s[0].sd, std::sqrt(5.0 / 3.0));
  EXPECT_DOUBLE_EQ(s[0].iqr, 1.5);
}

TEST(Metrics, TrueRuleHasFullPot) {
  const auto truth = default_regime(DgpKind::kSim1);
  const auto m = regime_metrics(truth, truth, DgpSpec{}, 20000, 3);
  EXPECT_EQ(m.pot, 1.0);
  EXPECT_NEAR(m.value, 1212.2, 5 * m.value_se + 1.0);
}

TEST(Metrics, AlwaysTreatPotMatchesDirectSimulation) {
  const auto always = le_regime({1e9, 1e9});
  const auto m = regime_metrics(always, default_regime(DgpKind::kSim1), DgpSpec{}, 100000, 4);
  // In Sim1 the stage-2 covariate does not depend on A1.
  Rng rng(123);
  const int n = 400000;
  int both = 0;
  for (int i = 0; i < n; ++i) {
    const double x1 = rng.normal(450, 150);
    const double x2 = rng.normal(1.25 * x1, 60);
    both += x1 <= 350 && x2 <= 450 ? 1 : 0;
  }
  const double p = static_cast<double>(both) / n;
  const double se = std::sqrt(p * (1 - p) / 100000) + std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(m.pot, p, 4 * se);
}

}  // namespace
}  // namespace dtr
