#include <sstream>

#include <gtest/gtest.h>

#include "dtr/baw_select.hpp"
#include "dtr/error.hpp"
#include "dtr/estimators.hpp"
#include "dtr/simgen.hpp"
#include "test_support.hpp"

namespace dtr {
namespace {

using test::le_regime;
using test::make_panel;

struct Fixture {
  Panel panel;
  Regime regime;
  NuisanceSpecs specs;
  PropensityTable props;
};

Fixture sim1_fixture(std::size_t n, std::uint64_t seed) {
  const DgpSpec spec;
  auto panel = generate(spec, n, seed);
  auto specs = default_nuisance(spec, panel).resolved(panel);
  auto props = fit_propensities(panel, specs.propensity, specs.clamp, specs.irls).table;
  return {std::move(panel), default_regime(DgpKind::kSim1), std::move(specs), std::move(props)};
}

BawConfig sim1_config(double lambda, std::size_t b = 40) {
  BawConfig c;
  c.axes = default_window_axes(DgpKind::kSim1);
  c.lambda_bias = lambda;
  c.bootstrap_count = b;
  return c;
}

TEST(DeltaMax, Examples) {
  EXPECT_DOUBLE_EQ(delta_max(150, 500, 35), 10.0);
  EXPECT_DOUBLE_EQ(delta_max(0, 100, 20), 5.0);
  EXPECT_THROW((void)delta_max(3, 3, 20), Error);
  EXPECT_THROW((void)delta_max(0, 1, 0), Error);
}

TEST(AxisValues, Examples) {
  EXPECT_EQ(window_axis_values(2, 10), (std::vector<double>{0, 2, 4, 6, 8, 10}));
  EXPECT_EQ(window_axis_values(3, 10), (std::vector<double>{0, 3, 6, 9}));
  EXPECT_THROW((void)window_axis_values(0, 10), Error);
  EXPECT_THROW((void)window_axis_values(11, 10), Error);
}

TEST(Grid, CartesianProductIsLexicographic) {
  const Regime regime({{Clause{0, 1, Direction::kLessEqual}, Clause{1, 2, Direction::kLessEqual}}});
  const WindowGrid grid({WindowAxis{0, 0, WindowSide::kBoth, {2, 0}}, WindowAxis{0, 1, WindowSide::kBoth, {0, 1}}});
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_EQ(grid.tuple(0), (std::vector<double>{0, 0}));
  EXPECT_EQ(grid.tuple(1), (std::vector<double>{0, 1}));
  EXPECT_EQ(grid.tuple(3), (std::vector<double>{2, 1}));
  const auto w = grid.window(regime, 2);
  EXPECT_EQ(w.stage(0)[0], (Tolerance{2, 2}));
  EXPECT_EQ(w.stage(0)[1], (Tolerance{0, 0}));
  EXPECT_TRUE(grid.window(regime, 0).is_strict());
}

TEST(Grid, OneSidedAxes) {
  const auto regime = le_regime({5});
  const WindowGrid grid({WindowAxis{0, 0, WindowSide::kUpper, {0, 3}}});
  EXPECT_EQ(grid.window(regime, 1).stage(0)[0], (Tolerance{0, 3}));
  const WindowGrid lower({WindowAxis{0, 0, WindowSide::kLower, {0, 3}}});
  EXPECT_EQ(lower.window(regime, 1).stage(0)[0], (Tolerance{3, 0}));
}

TEST(Grid, ZeroRequired) {
  EXPECT_THROW(WindowGrid({WindowAxis{0, 0, WindowSide::kBoth, {1, 2}}}), Error);
  EXPECT_THROW(WindowGrid({}), Error);
}

TEST(Grid, BuildFromSteps) {
  const auto grid = build_grid(le_regime({350, 450}), {{2}, {5}}, {{10}, {10}});
  EXPECT_EQ(grid.size(), 6u * 3u);
  EXPECT_THROW((void)build_grid(le_regime({350}), {{-1}}, {{10}}), Error);
}

TEST(Plan, ResampleDoesNotDependOnCount) {
  const auto small = BootstrapPlan::draw(100, 5, 9);
  const auto large = BootstrapPlan::draw(100, 20, 9);
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_EQ(small.rows[b], large.rows[b]);
  }
  for (const auto& r : large.rows) {
    EXPECT_EQ(r.size(), 100u);
    for (auto i : r) {
      EXPECT_LT(i, 100u);
    }
  }
}

TEST(Select, ZeroPenaltyDominatesStrictVariance) {
  const auto f = sim1_fixture(600, 3);
  const auto plan = BootstrapPlan::draw(600, 40, 4);
  const auto r = select_window(f.panel, f.regime, sim1_config(0.0), plan, f.specs, f.props);
  ASSERT_TRUE(r.candidates[0].window.is_strict());
  EXPECT_LE(r.best().variance, r.candidates[0].variance);
  for (const auto& c : r.candidates) {
    if (c.admissible && !c.disqualified) {
      EXPECT_GE(c.loss, r.best().loss);
    }
  }
}

TEST(Select, UnitPenaltyIsBootstrapMse) {
  const auto f = sim1_fixture(600, 5);
  const auto plan = BootstrapPlan::draw(600, 40, 6);
  const auto r = select_window(f.panel, f.regime, sim1_config(1.0), plan, f.specs, f.props);
  for (const auto& c : r.candidates) {
    if (c.admissible && !c.disqualified) {
      EXPECT_DOUBLE_EQ(c.loss, c.variance + c.bias * c.bias);
      EXPECT_DOUBLE_EQ(c.bias, c.mean - r.reference);
    }
  }
  const auto strict = ipw_weights(f.panel, f.regime, f.props);
  EXPECT_EQ(r.reference, value_ipw(f.panel, strict, true).value);
}

TEST(Select, StrictOnlyGridReturnsIpw) {
  const auto f = sim1_fixture(400, 7);
  BawConfig c;
  c.axes = {WindowAxis{0, 0, WindowSide::kBoth, {0}}, WindowAxis{1, 0, WindowSide::kBoth, {0}}};
  c.bootstrap_count = 10;
  const auto r = select_window(f.panel, f.regime, c, BootstrapPlan::draw(400, 10, 1), f.specs, f.props);
  EXPECT_EQ(r.candidates.size(), 1u);
  EXPECT_TRUE(r.best().window.is_strict());
  const auto baw = baw_weights(f.panel, f.regime, r.best().window, f.props);
  EXPECT_EQ(value_ipw(f.panel, baw, true).value, value_ipw(f.panel, ipw_weights(f.panel, f.regime, f.props), true).value);
}

TEST(Select, StrictCandidateMatchesReplicateIpw) {
  const auto f = sim1_fixture(500, 8);
  const auto plan = BootstrapPlan::draw(500, 25, 2);
  const auto r = select_window(f.panel, f.regime, sim1_config(1.0, 25), plan, f.specs, f.props);
  const Eigen::VectorXd w = ipw_weights(f.panel, f.regime, f.props).terminal();
  double sum = 0;
  for (const auto& rows : plan.rows) {
    std::vector<double> wb, yb;
    for (auto i : rows) {
      wb.push_back(w(static_cast<Eigen::Index>(i)));
      yb.push_back(f.panel.outcome()(static_cast<Eigen::Index>(i)));
    }
    sum += plain_value(wb, yb, true);
  }
  EXPECT_EQ(r.candidates[0].used, 25u);
  EXPECT_DOUBLE_EQ(r.candidates[0].mean, sum / 25.0);
}

TEST(Select, DeterministicGivenSeed) {
  const auto f = sim1_fixture(400, 9);
  const auto a = select_window(f.panel, f.regime, sim1_config(1.0, 20), 11, f.specs);
  const auto b = select_window(f.panel, f.regime, sim1_config(1.0, 20), 11, f.specs);
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  EXPECT_EQ(a.optimum, b.optimum);
  for (std::size_t g = 0; g < a.candidates.size(); ++g) {
    EXPECT_EQ(a.candidates[g].loss, b.candidates[g].loss);
  }
}

TEST(Select, TiesGoToSmallestWindow) {
  // No covariate value lies within 4 of the threshold, so every window
  // gives the same weights and the same loss.
  const auto panel = make_panel({{0, 1, 2, 3, 20, 21, 22, 23}}, {{1, 0, 1, 1, 0, 0, 1, 0}}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto regime = le_regime({10});
  PropensityTable props;
  props.treat_prob = Eigen::VectorXd::Constant(8, 0.5);
  BawConfig c;
  c.axes = {WindowAxis{0, 0, WindowSide::kBoth, {0, 2, 4}}};
  c.lambda_bias = 0.0;
  const auto r = select_window(panel, regime, c, BootstrapPlan::draw(8, 30, 3), NuisanceSpecs{}.resolved(panel), props);
  EXPECT_EQ(r.candidates[1].loss, r.candidates[0].loss);
  EXPECT_EQ(r.optimum, 0u);
}

TEST(Select, SparseStrictWindowIsDisqualified) {
  // Everyone is treated; only row 0 lies below the threshold, so the strict
  // window has one adherer. A 1-unit upper band admits the rows at 9.
  const auto regime = le_regime({8.5});
  PropensityTable props;
  props.treat_prob = Eigen::VectorXd::Constant(12, 0.5);
  const auto flipped = make_panel({{0, 9, 9, 9, 9, 9, 11, 11, 11, 11, 11, 11}}, {{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1}},
                                  {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  BawConfig c;
  c.axes = {WindowAxis{0, 0, WindowSide::kUpper, {0, 1}}};
  const auto r =
      select_window(flipped, regime, c, BootstrapPlan::draw(12, 100, 5), NuisanceSpecs{}.resolved(flipped), props);
  EXPECT_TRUE(r.candidates[0].disqualified);
  EXPECT_GT(r.candidates[0].excluded, 20u);
  EXPECT_FALSE(r.candidates[1].disqualified);
  EXPECT_EQ(r.optimum, 1u);

  BawConfig strict_only;
  strict_only.axes = {WindowAxis{0, 0, WindowSide::kUpper, {0}}};
  try {
    (void)select_window(flipped, regime, strict_only, BootstrapPlan::draw(12, 100, 5),
                        NuisanceSpecs{}.resolved(flipped), props);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDisqualifiedWindow);
  }
}

TEST(Select, InadmissibleCandidatesAreSkipped) {
  const auto panel = make_panel({{0, 1, 2, 3, 4, 5, 6, 7}}, {{1, 1, 0, 1, 0, 0, 1, 0}}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto regime = le_regime({1.5});  // psi - lo = 1.5
  PropensityTable props;
  props.treat_prob = Eigen::VectorXd::Constant(8, 0.5);
  BawConfig c;
  c.axes = {WindowAxis{0, 0, WindowSide::kBoth, {0, 1, 2}}};
  const auto r = select_window(panel, regime, c, BootstrapPlan::draw(8, 20, 1), NuisanceSpecs{}.resolved(panel), props);
  EXPECT_TRUE(r.candidates[1].admissible);
  EXPECT_FALSE(r.candidates[2].admissible);
  EXPECT_NE(r.optimum, 2u);
}

TEST(Select, RefitAndAugmentedModesRun) {
  const auto f = sim1_fixture(400, 10);
  auto c = sim1_config(1.0, 10);
  c.refit = true;
  const auto refit = select_window(f.panel, f.regime, c, 3, f.specs);
  EXPECT_TRUE(refit.best().admissible);
  c.refit = false;
  c.augmented = true;
  const auto aug = select_window(f.panel, f.regime, c, 3, f.specs);
  EXPECT_TRUE(aug.augmented);
  const QFunctionCache cache(f.panel, f.specs.outcome);
  const auto q = cache.evaluate(f.panel, f.regime);
  EXPECT_DOUBLE_EQ(aug.reference,
                   value_augmented(f.panel, ipw_weights(f.panel, f.regime, f.props), q.values, true).value);
  EXPECT_THROW((void)select_window(f.panel, f.regime, c, BootstrapPlan::draw(400, 10, 1), f.specs, f.props), Error);
}

TEST(Select, CsvHasOneRowPerCandidate) {
  const auto f = sim1_fixture(300, 12);
  const auto r = select_window(f.panel, f.regime, sim1_config(1.0, 10), 1, f.specs);
  std::ostringstream out;
  write_window_csv(out, r);
  std::size_t lines = 0;
  std::istringstream in(out.str());
  std::string line;
  while (std::getline(in, line)) {
    lines += line.empty() || line[0] == '#' ? 0 : 1;
  }
  EXPECT_EQ(lines, r.candidates.size() + 1);
  EXPECT_EQ(out.str().rfind("candidate,delta_lower_s1_c1", 0), 0u);
}

TEST(Config, Validation) {
  BawConfig c;
  c.axes = default_window_axes(DgpKind::kSim1);
  EXPECT_NO_THROW(c.validate());
  c.bootstrap_count = 1;
  EXPECT_THROW(c.validate(), Error);
  c.bootstrap_count = 10;
  c.lambda_bias = -1;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace dtr
