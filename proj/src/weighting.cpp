#include "dtr/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtr/error.hpp"

namespace dtr {

std::string_view to_string(WeightKind kind) noexcept {
  switch (kind) {
    case WeightKind::kIpw:
      return "ipw";
    case WeightKind::kGaw:
      return "gaw";
    case WeightKind::kBaw:
      return "baw";
  }
  return "?";
}

double GawConfig::epsilon(std::size_t n) const { return c * std::pow(static_cast<double>(n), -k); }

void GawConfig::validate(std::size_t n) const {
  require(std::isfinite(c) && c >= 0.0, "GAW c must be a non-negative finite number");
  require(std::isfinite(k) && k > 0.0, "GAW k must be positive");
  require(n > 0, "GAW needs a non-empty sample");
  const double eps = epsilon(n);
  require(eps < 1.0, "GAW epsilon_n = c * n^-k must be below 1 (got " + std::to_string(eps) + ")");
}

double gamma_from_constraint(double eps_t, double p_t, double cap, bool* capped) {
  require(eps_t >= 0.0 && eps_t < 1.0, "gamma_from_constraint: eps_t must lie in [0, 1)");
  require(p_t > 0.0 && p_t < 1.0, "gamma_from_constraint: adherence probability must lie in (0, 1)");
  const double gamma = eps_t * p_t / ((1.0 - eps_t) * (1.0 - p_t));
  if (capped != nullptr) {
    *capped = gamma > cap;
  }
  return std::min(gamma, cap);
}

double gaw_stage_weight(bool adherent, double p_t, double gamma_t) {
  const double m = adherent ? 1.0 : gamma_t;
  const double d = p_t + gamma_t * (1.0 - p_t);
  return m / d;
}

void accumulate_weights(WeightSeries& series) {
  series.cumulative.resize(series.stage.rows(), series.stage.cols());
  for (Eigen::Index i = 0; i < series.stage.rows(); ++i) {
    double running = 1.0;
    for (Eigen::Index t = 0; t < series.stage.cols(); ++t) {
      running *= series.stage(i, t);
      series.cumulative(i, t) = running;
    }
  }
}

namespace {

void check_shapes(const Panel& panel, const Regime& regime, const PropensityTable& propensities) {
  require(regime.stage_count() == panel.stage_count(), "regime and panel stage counts differ");
  require(propensities.treat_prob.rows() == static_cast<Eigen::Index>(panel.size()) &&
              propensities.treat_prob.cols() == static_cast<Eigen::Index>(panel.stage_count()),
          "propensity table shape does not match panel");
}

WeightSeries make_series(WeightKind kind, const Panel& panel) {
  WeightSeries series;
  series.kind = kind;
  series.stage.resize(static_cast<Eigen::Index>(panel.size()), static_cast<Eigen::Index>(panel.stage_count()));
  return series;
}

template <class Compatible>
WeightSeries indicator_weights(WeightKind kind, const Panel& panel, const PropensityTable& propensities,
                               Compatible compatible) {
  auto series = make_series(kind, panel);
  for (std::size_t i = 0; i < panel.size(); ++i) {
    for (std::size_t t = 0; t < panel.stage_count(); ++t) {
      series.stage(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
          compatible(i, t) ? 1.0 / propensities.observed(panel, i, t) : 0.0;
    }
  }
  accumulate_weights(series);
  return series;
}

WeightSeries gaw_impl(const Panel& panel, const Regime& regime, const PropensityTable& propensities,
                      const GammaSupplier& gamma_of, std::optional<GawConfig> config) {
  check_shapes(panel, regime, propensities);
  auto series = make_series(WeightKind::kGaw, panel);
  series.gaw_config = config;
  const auto n = static_cast<Eigen::Index>(panel.size());
  const auto stages = static_cast<Eigen::Index>(panel.stage_count());
  GawStageQuantities q;
  q.adherence_prob.resize(n, stages);
  q.gamma.resize(n, stages);
  q.compatibility.resize(n, stages);
  q.denominator.resize(n, stages);
  q.theta = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (Eigen::Index t = 0; t < stages; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      const int d = recommended_action(regime, panel, ui, ut);
      const double p = propensities.of(d, ui, ut);
      const double gamma = gamma_of(ui, ut, p);
      require(gamma >= 0.0 && gamma < 1.0, "GAW relaxation gamma must lie in [0, 1)");
      const bool adherent = panel.treatment(ut, ui) == d;
      const double m = adherent ? 1.0 : gamma;
      const double denom = p + gamma * (1.0 - p);
      q.adherence_prob(i, t) = p;
      q.gamma(i, t) = gamma;
      q.compatibility(i, t) = m;
      q.denominator(i, t) = denom;
      q.theta(i) *= p / denom;
      series.stage(i, t) = m / denom;
    }
  }
  series.gaw = std::move(q);
  accumulate_weights(series);
  return series;
}

}  // namespace

WeightSeries ipw_weights(const Panel& panel, const Regime& regime, const PropensityTable& propensities) {
  check_shapes(panel, regime, propensities);
  return indicator_weights(WeightKind::kIpw, panel, propensities,
                           [&](std::size_t i, std::size_t t) { return strict_adherence(regime, panel, i, t); });
}

WeightSeries gaw_weights(const Panel& panel, const Regime& regime, const PropensityTable& propensities,
                         const GawConfig& config) {
  config.validate(panel.size());
  const double eps_t = config.stage_epsilon(panel.size(), panel.stage_count());
  std::size_t capped_events = 0;
  auto series = gaw_impl(
      panel, regime, propensities,
      [&](std::size_t, std::size_t, double p) {
        bool capped = false;
        const double g = gamma_from_constraint(eps_t, p, kGammaCap, &capped);
        capped_events += capped ? 1 : 0;
        return g;
      },
      config);
  series.gaw->gamma_cap_events = capped_events;
  return series;
}

WeightSeries gaw_weights(const Panel& panel, const Regime& regime, const PropensityTable& propensities,
                         const GammaSupplier& gamma) {
  return gaw_impl(panel, regime, propensities, gamma, std::nullopt);
}

WeightSeries baw_weights(const Panel& panel, const Regime& regime, const WindowSpec& window,
                         const PropensityTable& propensities) {
  check_shapes(panel, regime, propensities);
  require(window.stage_count() == regime.stage_count(), "window and regime stage counts differ");
  auto series = indicator_weights(WeightKind::kBaw, panel, propensities, [&](std::size_t i, std::size_t t) {
    return windowed_compatibility(regime, window, panel, i, t);
  });
  series.window = window;
  return series;
}

double ess(std::span<const double> weights) {
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const double w : weights) {
    require(w >= 0.0, "ess: weights must be non-negative");
    sum += w;
    sum_sq += w * w;
  }
  if (!(sum > 0.0)) {
    fail(ErrorCode::kNoAdherers, "ess: weights sum to zero");
  }
  return sum * sum / sum_sq;
}

double ess(const Eigen::Ref<const Eigen::VectorXd>& weights) {
  return ess(std::span<const double>(weights.data(), static_cast<std::size_t>(weights.size())));
}

double percentile(std::vector<double> values, double pct) {
  require(!values.empty(), "percentile of an empty sample");
  require(pct >= 0.0 && pct <= 100.0, "percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = (static_cast<double>(values.size()) - 1.0) * pct / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double weight_spread(std::span<const double> weights, double lo_pct, double hi_pct) {
  require(hi_pct >= lo_pct, "weight_spread: upper percentile below lower percentile");
  std::vector<double> v(weights.begin(), weights.end());
  return percentile(v, hi_pct) - percentile(v, lo_pct);
}

double smd(std::span<const double> covariate, std::span<const int> groups, std::span<const double> weights) {
  require(covariate.size() == groups.size(), "smd: covariate and group lengths differ");
  require(weights.empty() || weights.size() == covariate.size(), "smd: weight length differs");
  double wsum[2] = {0.0, 0.0};
  double wmean[2] = {0.0, 0.0};
  double sum[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < covariate.size(); ++i) {
    require(groups[i] == 0 || groups[i] == 1, "smd: groups must be coded 0/1");
    const auto g = static_cast<std::size_t>(groups[i]);
    const double w = weights.empty() ? 1.0 : weights[i];
    wsum[g] += w;
    wmean[g] += w * covariate[i];
    sum[g] += covariate[i];
    count[g] += 1.0;
  }
  require(count[0] >= 2 && count[1] >= 2, "smd: each group needs at least two members");
  require(wsum[0] > 0.0 && wsum[1] > 0.0, "smd: a group has zero total weight");
  double var[2] = {0.0, 0.0};
  const double mean[2] = {sum[0] / count[0], sum[1] / count[1]};
  for (std::size_t i = 0; i < covariate.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    var[g] += (covariate[i] - mean[g]) * (covariate[i] - mean[g]);
  }
  var[0] /= count[0] - 1.0;
  var[1] /= count[1] - 1.0;
  const double pooled = std::sqrt((var[0] + var[1]) / 2.0);
  require(pooled > 0.0, "smd: pooled standard deviation is zero");
  return (wmean[1] / wsum[1] - wmean[0] / wsum[0]) / pooled;
}

}  // namespace dtr
