#include <algorithm>
#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "dtr/baw_select.hpp"
#include "dtr/error.hpp"
#include "dtr/estimators.hpp"
#include "dtr/glm.hpp"
#include "dtr/simgen.hpp"
#include "test_support.hpp"

namespace dtr {
namespace {

using test::le_regime;
using test::make_panel;
using test::relative_gap;

WeightSeries series_from_terminal(const std::vector<double>& w) {
  WeightSeries s;
  s.stage = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  accumulate_weights(s);
  return s;
}

PropensityTable fitted(const Panel& panel) {
  std::vector<FeatureSpec> specs;
  for (std::size_t t = 0; t < panel.stage_count(); ++t) {
    specs.push_back(default_propensity_spec(panel, t));
  }
  return fit_propensities(panel, specs).table;
}

std::vector<FeatureSpec> outcome_specs(const Panel& panel) {
  std::vector<FeatureSpec> specs;
  for (std::size_t t = 0; t < panel.stage_count(); ++t) {
    specs.push_back(default_outcome_spec(panel, t));
  }
  return specs;
}

std::span<const double> span_of(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

TEST(PlainValue, Examples) {
  const std::vector<double> y{10, 99, 4};
  const std::vector<double> ones{1, 1, 1};
  EXPECT_DOUBLE_EQ(plain_value(ones, y, true), 113.0 / 3.0);
  EXPECT_DOUBLE_EQ(plain_value(ones, y, false), 113.0 / 3.0);
  const std::vector<double> w{2, 0, 1};
  EXPECT_DOUBLE_EQ(plain_value(w, y, true), 8.0);
  EXPECT_DOUBLE_EQ(plain_value(w, y, false), 8.0);
  const std::vector<double> single{0, 5, 0};
  EXPECT_DOUBLE_EQ(plain_value(single, y, true), 99.0);
}

TEST(PlainValue, ZeroWeightsNormalizedIsNoAdherers) {
  const std::vector<double> y{1, 2};
  const std::vector<double> w{0, 0};
  try {
    (void)plain_value(w, y, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoAdherers);
  }
  EXPECT_EQ(plain_value(w, y, false), 0.0);
}

TEST(PlainValue, NormalizedStaysWithinOutcomeRange) {
  const auto panel = test::random_panel(1, 400, 2);
  const auto w = ipw_weights(panel, le_regime({0, 0}), fitted(panel));
  const double v = value_ipw(panel, w, true).value;
  EXPECT_GE(v, panel.outcome().minCoeff());
  EXPECT_LE(v, panel.outcome().maxCoeff());
}

TEST(PlainValue, ScaleInvariance) {
  const auto panel = test::random_panel(2, 300, 2);
  const auto w = ipw_weights(panel, le_regime({0.3, 0}), fitted(panel));
  const Eigen::VectorXd t = w.terminal();
  const Eigen::VectorXd y = panel.outcome();
  const Eigen::VectorXd t4 = 4.0 * t;
  EXPECT_EQ(plain_value(span_of(t4), span_of(y), true), plain_value(span_of(t), span_of(y), true));
  const Eigen::VectorXd t3 = 3.0 * t;
  EXPECT_LE(relative_gap(plain_value(span_of(t3), span_of(y), true), plain_value(span_of(t), span_of(y), true)), 1e-12);
  EXPECT_LE(relative_gap(plain_value(span_of(t3), span_of(y), false), 3 * plain_value(span_of(t), span_of(y), false)),
            1e-12);
}

TEST(PlainValue, LocationEquivariance) {
  const auto base = test::random_panel(3, 300, 2);
  const double a = 17.25;
  const Panel shifted(base.stages(), (base.outcome().array() + a).matrix());
  const auto regime = le_regime({0.2, -0.2});
  const auto p = fitted(base);
  const auto w = ipw_weights(base, regime, p);
  const double n = static_cast<double>(base.size());
  EXPECT_NEAR(value_ipw(shifted, w, true).value, value_ipw(base, w, true).value + a, 1e-11);
  EXPECT_NEAR(value_ipw(shifted, w, false).value, value_ipw(base, w, false).value + a * w.terminal().sum() / n, 1e-11);

  const auto specs = outcome_specs(base);
  const auto q0 = fit_q_functions(base, regime, specs);
  const auto q1 = fit_q_functions(shifted, regime, specs);
  for (bool normalized : {false, true}) {
    EXPECT_NEAR(value_augmented(shifted, w, q1.values, normalized).value,
                value_augmented(base, w, q0.values, normalized).value + a, 1e-9);
  }
}

TEST(AugmentedValue, ZeroQEqualsUnnormalizedPlain) {
  const auto panel = test::random_panel(4, 250, 2);
  const auto w = ipw_weights(panel, le_regime({0, 0.1}), fitted(panel));
  std::vector<Eigen::VectorXd> q{Eigen::VectorXd::Zero(250), Eigen::VectorXd::Zero(250), panel.outcome()};
  const double aug = value_augmented(panel, w, q, false).value;
  const double plain = value_ipw(panel, w, false).value;
  EXPECT_LE(relative_gap(aug, plain), 1e-12);
}

TEST(AugmentedValue, ZeroWeightsGiveGComputation) {
  const auto panel = make_panel({{1, 2, 3}}, {{0, 0, 0}}, {5, 6, 7});
  const auto w = series_from_terminal({0, 0, 0});
  std::vector<Eigen::VectorXd> q{Eigen::Vector3d(4, 8, 9), panel.outcome()};
  EXPECT_DOUBLE_EQ(augmented_value(w.cumulative, q, false), 7.0);
  try {
    (void)augmented_value(w.cumulative, q, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoAdherers);
    EXPECT_NE(std::string(e.what()).find('1'), std::string::npos);
  }
}

TEST(AugmentedValue, NormalizedHandValue) {
  // T = 1: mean(Q1) + sum w (Y - Q1) / sum w, and sum w = n here.
  const auto w = series_from_terminal({2, 0, 1});
  std::vector<Eigen::VectorXd> q{Eigen::Vector3d(4, 5, 6), Eigen::Vector3d(5, 9, 4)};
  EXPECT_DOUBLE_EQ(augmented_value(w.cumulative, q, true), 5.0 + (2.0 * 1 + 1.0 * -2) / 3.0);
  EXPECT_DOUBLE_EQ(augmented_value(w.cumulative, q, false), 5.0 + (2.0 * 1 + 1.0 * -2) / 3.0);
}

TEST(AnalyticalVariance, PlainExamples) {
  const auto panel = make_panel({{1, 2, 3, 4}}, {{0, 0, 0, 0}}, {1, 3, 5, 11});
  const auto w = series_from_terminal({1, 1, 1, 1});
  // Population-divisor variance of Y over n: mean 5, squares 16+4+0+36 = 56.
  EXPECT_DOUBLE_EQ(analytical_variance_plain(panel, w, 5.0), 56.0 / 16.0);
  const auto flat = make_panel({{1, 2, 3}}, {{0, 0, 0}}, {2, 2, 2});
  EXPECT_EQ(analytical_variance_plain(flat, series_from_terminal({3, 0, 1}), 2.0), 0.0);
  EXPECT_THROW((void)analytical_variance_plain(flat, series_from_terminal({0, 0, 0}), 2.0), Error);
}

TEST(AnalyticalVariance, PlainSandwichCorrectsWeightMean) {
  // sum w^2 (Y - V)^2 / n^2 / Jbar^2 with Jbar = mean w.
  const auto panel = make_panel({{1, 2, 3}}, {{0, 0, 0}}, {10, 99, 4});
  const auto w = series_from_terminal({2, 0, 1});
  const double v = 8.0;
  const double jbar = 1.0;
  EXPECT_DOUBLE_EQ(analytical_variance_plain(panel, w, v), (4.0 * 4 + 1.0 * 16) / 9.0 / (jbar * jbar));
  const auto w2 = series_from_terminal({4, 0, 2});
  EXPECT_DOUBLE_EQ(analytical_variance_plain(panel, w2, v), analytical_variance_plain(panel, w, v));
}

TEST(AnalyticalVariance, AugmentedReducesToMeanOnlyTerm) {
  // Q1 = Y makes every augmentation increment zero, leaving U_i = (Q1_i - V) / n.
  const auto w = series_from_terminal({1, 2, 1, 3});
  const Eigen::Vector4d q1(2, 4, 6, 8);
  std::vector<Eigen::VectorXd> q{q1, q1};
  const double v = 5.0;
  EXPECT_DOUBLE_EQ(analytical_variance_augmented(w, q, v), (9.0 + 1 + 1 + 9) / 16.0);
  std::vector<Eigen::VectorXd> flat{Eigen::Vector4d::Constant(3), Eigen::Vector4d::Constant(3)};
  EXPECT_EQ(analytical_variance_augmented(w, flat, 3.0), 0.0);
  EXPECT_THROW((void)analytical_variance_augmented(series_from_terminal({0, 0, 0, 0}), q, v), Error);
}

TEST(AnalyticalVariance, AugmentedHandValue) {
  // U_i = w_i (Y_i - Q_i) / S + (Q_i - V) / n.
  const auto w = series_from_terminal({2, 0, 1});
  std::vector<Eigen::VectorXd> q{Eigen::Vector3d(4, 5, 6), Eigen::Vector3d(5, 9, 4)};
  const double v = 5.0;
  const double u0 = 2.0 * 1 / 3 + (4.0 - 5) / 3;
  const double u1 = 0.0 + 0.0;
  const double u2 = 1.0 * -2 / 3 + (6.0 - 5) / 3;
  EXPECT_NEAR(analytical_variance_augmented(w, q, v), u0 * u0 + u1 * u1 + u2 * u2, 1e-15);
}

TEST(BiasBound, Examples) {
  const std::vector<double> ones{1, 1, 1};
  EXPECT_EQ(bias_bound(ones, 100), 0.0);
  const std::vector<double> two_stage{0.9025, 0.9025};
  EXPECT_NEAR(bias_bound(two_stage, 100), 9.75, 1e-12);
  const std::vector<double> mixed{0.99, 0.8, 0.95};
  EXPECT_NEAR(bias_bound(mixed, 10), 2.0, 1e-12);
}

TEST(Estimators, NamesRoundTrip) {
  const auto all = EstimatorSpec::all();
  EXPECT_EQ(all.size(), 12u);
  for (const auto& e : all) {
    EXPECT_EQ(EstimatorSpec::parse(e.name()), e);
  }
  EXPECT_EQ(EstimatorSpec::parse("nabaw").name(), "nabaw");
  EXPECT_TRUE(EstimatorSpec::parse("agaw").augmented);
  EXPECT_FALSE(EstimatorSpec::parse("agaw").normalized);
  EXPECT_THROW((void)EstimatorSpec::parse("foo"), Error);
}

TEST(Estimators, EquivalenceLattice) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto panel = test::random_panel(100 + seed, 150, 2);
    const auto regime = le_regime({0.0, 0.25});
    const auto p = fitted(panel);
    const auto ipw = ipw_weights(panel, regime, p);
    const auto gaw = gaw_weights(panel, regime, p, GawConfig{0.0, 0.5});
    const auto baw = baw_weights(panel, regime, WindowSpec::strict(regime), p);
    const auto q = fit_q_functions(panel, regime, outcome_specs(panel));
    for (bool normalized : {false, true}) {
      const double base = value_ipw(panel, ipw, normalized).value;
      EXPECT_LE(relative_gap(value_ipw(panel, gaw, normalized).value, base), 1e-12);
      EXPECT_LE(relative_gap(value_ipw(panel, baw, normalized).value, base), 1e-12);
      const double aug = value_augmented(panel, ipw, q.values, normalized).value;
      EXPECT_LE(relative_gap(value_augmented(panel, gaw, q.values, normalized).value, aug), 1e-12);
      EXPECT_LE(relative_gap(value_augmented(panel, baw, q.values, normalized).value, aug), 1e-12);
    }
  }
}

TEST(Estimators, VarianceOnlyForNormalized) {
  const auto panel = test::random_panel(9, 200, 2);
  const auto w = ipw_weights(panel, le_regime({0, 0}), fitted(panel));
  EXPECT_FALSE(value_ipw(panel, w, false).variance.has_value());
  const auto e = value_ipw(panel, w, true);
  ASSERT_TRUE(e.variance.has_value());
  ASSERT_TRUE(e.ess.has_value());
  EXPECT_GT(*e.ess, 1.0);
}

TEST(Estimators, ToyOracleByStratumEnumeration) {
  // T = 1, X and A binary; every (x, a) stratum is listed with its outcomes.
  std::vector<double> x, y;
  std::vector<int> a;
  const std::array<std::array<int, 2>, 2> counts{{{3, 5}, {4, 2}}};  // [x][a]
  for (int xv = 0; xv < 2; ++xv) {
    for (int av = 0; av < 2; ++av) {
      for (int k = 0; k < counts[xv][av]; ++k) {
        x.push_back(xv);
        a.push_back(av);
        y.push_back(10 * xv + 3 * av + 0.5 * k);
      }
    }
  }
  const auto panel = make_panel({x}, {a}, y);
  const auto regime = le_regime({0.0});  // treat x = 0, control x = 1
  PropensityTable truth;
  truth.treat_prob.resize(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto xv = static_cast<std::size_t>(x[i]);
    truth.treat_prob(static_cast<Eigen::Index>(i), 0) =
        static_cast<double>(counts[xv][1]) / static_cast<double>(counts[xv][0] + counts[xv][1]);
  }
  const double v = value_ipw(panel, ipw_weights(panel, regime, truth), true).value;

  double direct = 0;
  const double n = static_cast<double>(y.size());
  for (int xv = 0; xv < 2; ++xv) {
    const int d = xv == 0 ? 1 : 0;
    double sum = 0;
    for (int k = 0; k < counts[xv][d]; ++k) {
      sum += 10 * xv + 3 * d + 0.5 * k;
    }
    direct += (counts[xv][0] + counts[xv][1]) / n * sum / counts[xv][d];
  }
  EXPECT_LE(relative_gap(v, direct), 1e-12);
}

// True Sim1 propensities.
PropensityTable sim1_truth(const Panel& panel) {
  PropensityTable t;
  t.treat_prob.resize(static_cast<Eigen::Index>(panel.size()), 2);
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    t.treat_prob(r, 0) = expit(2 - 0.006 * panel.covariate(0, i, 0));
    t.treat_prob(r, 1) = expit(0.8 - 0.004 * panel.covariate(1, i, 0));
  }
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

TEST(Estimators, ErrorShrinksWithSampleSize) {
  const DgpSpec spec;
  const auto regime = default_regime(DgpKind::kSim1);
  const double oracle = oracle_value(spec, regime, 1000000, 99).mean;
  std::array<std::array<std::vector<double>, 3>, 2> errors;
  const std::array<std::size_t, 2> sizes{500, 2000};
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::uint64_t r = 0; r < 50; ++r) {
      const auto panel = generate(spec, sizes[s], derive_seed(77, {sizes[s], r}));
      const auto truth = sim1_truth(panel);
      errors[s][0].push_back(std::abs(value_ipw(panel, ipw_weights(panel, regime, truth), true).value - oracle));
      errors[s][1].push_back(
          std::abs(value_ipw(panel, gaw_weights(panel, regime, truth, GawConfig{0.18, 0.5}), true).value - oracle));
      BawConfig baw;
      baw.axes = default_window_axes(DgpKind::kSim1);
      baw.bootstrap_count = 50;
      const auto plan = BootstrapPlan::draw(panel.size(), baw.bootstrap_count, derive_seed(78, {sizes[s], r}));
      const auto search = select_window(panel, regime, baw, plan, NuisanceSpecs{}.resolved(panel), truth);
      errors[s][2].push_back(
          std::abs(value_ipw(panel, baw_weights(panel, regime, search.best().window, truth), true).value - oracle));
    }
  }
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_LT(median(errors[1][e]), median(errors[0][e])) << "estimator " << e;
  }
}

}  // namespace
}  // namespace dtr
