#include "dtr/study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "dtr/csv.hpp"
#include "dtr/error.hpp"
#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace dtr {

std::string_view to_string(GawTuning tuning) noexcept {
  switch (tuning) {
    case GawTuning::kFixed:
      return "fixed";
    case GawTuning::kSurfaceRange:
      return "surface_range";
    case GawTuning::kOutcomeRange:
      return "outcome_range";
  }
  return "?";
}

GawTuning parse_gaw_tuning(std::string_view name) {
  for (const auto t : {GawTuning::kFixed, GawTuning::kSurfaceRange, GawTuning::kOutcomeRange}) {
    if (to_string(t) == name) {
      return t;
    }
  }
  fail(ErrorCode::kInvalidArgument,
       "unknown GAW tuning '" + std::string(name) + "' (expected fixed, surface_range or outcome_range)");
}

StudyConfig StudyConfig::resolved() const {
  StudyConfig out = *this;
  out.dgp.validate();
  if (out.grid.empty()) {
    out.grid = default_grid(out.dgp.kind);
  }
  if (out.baw.axes.empty()) {
    out.baw.axes = default_window_axes(out.dgp.kind);
  }
  require(!out.sample_sizes.empty(), "study needs at least one sample size");
  for (const auto n : out.sample_sizes) {
    require(n >= 10, "study sample sizes must be at least 10");
  }
  require(out.replications >= 2, "study needs at least two replications");
  require(!out.estimators.empty(), "study needs at least one estimator");
  require(out.grid.size() == default_regime(out.dgp.kind).clause_count(), "grid needs one axis per threshold");
  require(out.truth_mc >= 2 && out.external_n >= 2, "truth_mc and external_n must be at least 2");
  require(out.gaw_tuning == GawTuning::kFixed || (std::isfinite(out.gaw_m) && out.gaw_m > 0.0),
          "gaw.m must be positive");
  require(out.threads >= 1, "threads must be at least 1");
  bool baw = false;
  for (const auto& e : out.estimators) {
    baw = baw || e.weighting == WeightKind::kBaw;
  }
  if (baw) {
    out.baw.validate();
  }
  return out;
}

ReplicateMetrics replicate_metrics(const std::vector<double>& estimates, double truth) {
  require(estimates.size() >= 2, "replicate metrics need at least two estimates");
  ReplicateMetrics m;
  const auto r = static_cast<double>(estimates.size());
  double sum = 0.0;
  for (const double v : estimates) {
    sum += v;
  }
  m.mean = sum / r;
  double ss = 0.0;
  double se = 0.0;
  for (const double v : estimates) {
    ss += (v - m.mean) * (v - m.mean);
    se += (v - truth) * (v - truth);
  }
  m.variance = ss / (r - 1.0);
  m.bias = m.mean - truth;
  m.rmse = std::sqrt(se / r);
  return m;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Welford {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  [[nodiscard]] double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : kNaN; }
  [[nodiscard]] double sd() const { return count > 1 ? std::sqrt(variance()) : (count == 1 ? 0.0 : kNaN); }
};

struct CellAcc {
  Welford value;
  double squared_error = 0.0;
  Welford ess;
  Welford analytic;
  Welford gap;
  Welford bound;
  std::size_t missing = 0;
};

using Grid2 = std::vector<std::vector<std::optional<double>>>;

struct Replicate {
  bool ok = false;
  std::string message;
  std::optional<double> gaw_c;
  Grid2 value, ess, analytic, gap, bound;  // [estimator][cell]
  std::vector<std::optional<std::vector<double>>> psi;
  std::vector<std::optional<RegimeMetrics>> metrics;
  std::vector<std::vector<std::optional<bool>>> covered;  // [estimator][axis]
  std::vector<std::pair<std::string, double>> ess_difference;
  std::vector<std::pair<std::string, double>> spread;
  std::vector<std::pair<double, double>> smd;  // flattened over (stage, covariate)
};

struct Context {
  const StudyConfig& config;
  std::vector<EstimatorSpec> estimators;
  Regime base;
  std::vector<std::vector<double>> cells;
  Regime truth_regime;
  std::vector<double> true_psi;
  std::size_t nipw = 0;
};

double positive_spread(const Eigen::VectorXd& w) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0.0) {
      v.push_back(w(i));
    }
  }
  if (v.empty()) {
    return kNaN;
  }
  return weight_spread(v, 1.0, 99.0);
}

Replicate run_replicate(const Context& ctx, std::size_t n, std::size_t r) {
  const auto& cfg = ctx.config;
  Replicate rep;
  const std::size_t E = ctx.estimators.size();
  const std::size_t C = ctx.cells.size();
  try {
    const Panel panel = generate(cfg.dgp, n, derive_seed(cfg.seed, {n, r, 1}));
    EstimationSettings settings;
    settings.nuisance = default_nuisance(cfg.dgp, panel);
    settings.gaw = cfg.gaw;
    settings.baw = cfg.baw;
    settings.seed = derive_seed(cfg.seed, {n, r, 2});

    bool needs_gaw = false;
    for (const auto& e : ctx.estimators) {
      needs_gaw = needs_gaw || e.weighting == WeightKind::kGaw;
    }
    if (needs_gaw && cfg.gaw_tuning != GawTuning::kFixed) {
      double range = 0.0;
      if (cfg.gaw_tuning == GawTuning::kOutcomeRange) {
        range = panel.outcome().maxCoeff() - panel.outcome().minCoeff();
      } else {
        const RegimeEvaluator pilot(panel, settings, {EstimatorSpec::parse("nipw")});
        const auto s = evaluate_surface(pilot, ctx.base, cfg.grid, 1);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& cell : s.results) {
          if (cell.front().estimate) {
            lo = std::min(lo, cell.front().estimate->value);
            hi = std::max(hi, cell.front().estimate->value);
          }
        }
        range = hi - lo;
      }
      require(range > 0.0, "GAW tuning range is zero");
      settings.gaw.c = cfg.gaw_m / range;
    }
    if (needs_gaw) {
      rep.gaw_c = settings.gaw.c;
    }

    const RegimeEvaluator evaluator(panel, settings, ctx.estimators);
    const auto surface = evaluate_surface(evaluator, ctx.base, cfg.grid, 1);

    rep.value.assign(E, std::vector<std::optional<double>>(C));
    rep.ess = rep.analytic = rep.gap = rep.bound = rep.value;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t e = 0; e < E; ++e) {
        const auto& cell = surface.results[c][e];
        if (!cell.estimate) {
          continue;
        }
        rep.value[e][c] = cell.estimate->value;
        rep.ess[e][c] = cell.estimate->ess;
        rep.analytic[e][c] = cell.estimate->variance;
      }
    }
    // GAW against its IPW counterpart.
    for (std::size_t e = 0; e < E; ++e) {
      const auto& spec = ctx.estimators[e];
      if (spec.weighting != WeightKind::kGaw) {
        continue;
      }
      const std::size_t e0 = surface.estimator_index({WeightKind::kIpw, spec.augmented, spec.normalized});
      for (std::size_t c = 0; c < C; ++c) {
        if (rep.value[e][c] && rep.value[e0][c]) {
          rep.gap[e][c] = std::abs(*rep.value[e][c] - *rep.value[e0][c]);
          rep.bound[e][c] = surface.results[c][e].bias_bound;
        }
      }
    }
    // Estimated thresholds and their external performance.
    rep.psi.resize(E);
    rep.metrics.resize(E);
    rep.covered.assign(E, std::vector<std::optional<bool>>(cfg.grid.size()));
    for (std::size_t e = 0; e < E; ++e) {
      if (!surface.optima[e]) {
        continue;
      }
      rep.psi[e] = surface.optima[e]->psi;
      rep.metrics[e] = regime_metrics(ctx.base.with_thresholds(*rep.psi[e]), ctx.truth_regime, cfg.dgp,
                                      cfg.external_n, derive_seed(cfg.seed, {n, r, 3}));
      if (cfg.coverage_bootstrap > 0) {
        const auto boot = bootstrap_thresholds(panel, ctx.base, cfg.grid, ctx.estimators[e], settings,
                                               cfg.coverage_bootstrap, derive_seed(cfg.seed, {n, r, 4, e}), 1);
        if (!boot.argmax.empty()) {
          for (std::size_t a = 0; a < cfg.grid.size(); ++a) {
            const auto& s = boot.summary[a];
            rep.covered[e][a] = ctx.true_psi[a] >= s.ci_lower && ctx.true_psi[a] <= s.ci_upper;
          }
        }
      }
    }
    // Surface-averaged ESS differences against nIPW.
    for (std::size_t e = 0; e < E; ++e) {
      if (e == ctx.nipw) {
        continue;
      }
      Welford diff;
      for (std::size_t c = 0; c < C; ++c) {
        if (rep.ess[e][c] && rep.ess[ctx.nipw][c]) {
          diff.add(*rep.ess[e][c] - *rep.ess[ctx.nipw][c]);
        }
      }
      if (diff.count > 0) {
        rep.ess_difference.emplace_back(ctx.estimators[e].name() + "-nipw", diff.mean);
      }
    }
    // Weight spread at the true regime.
    const auto& table = evaluator.propensities().table;
    const auto at_truth = evaluator.evaluate(ctx.truth_regime);
    bool seen[3] = {false, false, false};
    for (std::size_t e = 0; e < E; ++e) {
      const auto kind = ctx.estimators[e].weighting;
      if (seen[static_cast<int>(kind)]) {
        continue;
      }
      std::optional<WeightSeries> w;
      if (kind == WeightKind::kIpw) {
        w = ipw_weights(panel, ctx.truth_regime, table);
      } else if (kind == WeightKind::kGaw) {
        w = gaw_weights(panel, ctx.truth_regime, table, settings.gaw);
      } else if (at_truth[e].estimate && at_truth[e].estimate->diagnostics.window) {
        w = baw_weights(panel, ctx.truth_regime, *at_truth[e].estimate->diagnostics.window, table);
      }
      if (w) {
        seen[static_cast<int>(kind)] = true;
        rep.spread.emplace_back(std::string(to_string(kind)), positive_spread(w->terminal()));
      }
    }
    // Covariate balance per stage, raw and inverse-propensity weighted.
    for (std::size_t t = 0; t < panel.stage_count(); ++t) {
      const auto& stage = panel.stage(t);
      std::vector<double> iptw(panel.size());
      for (std::size_t i = 0; i < panel.size(); ++i) {
        iptw[i] = 1.0 / table.observed(panel, i, t);
      }
      for (Eigen::Index j = 0; j < stage.covariates.cols(); ++j) {
        const Eigen::VectorXd col = stage.covariates.col(j);
        const std::span<const double> x(col.data(), panel.size());
        rep.smd.emplace_back(smd(x, stage.treatment), smd(x, stage.treatment, iptw));
      }
    }
    rep.ok = true;
  } catch (const Error& e) {
    rep.ok = false;
    rep.message = std::string(to_string(e.code())) + ": " + e.what();
  }
  return rep;
}

void add_opt(Welford& w, const std::optional<double>& v) {
  if (v) {
    w.add(*v);
  }
}

Welford over_cells(const std::vector<double>& xs) {
  Welford w;
  for (const double x : xs) {
    if (std::isfinite(x)) {
      w.add(x);
    }
  }
  return w;
}

}  // namespace

StudyResult run_study(const StudyConfig& raw) {
  const StudyConfig cfg = raw.resolved();
  std::vector<EstimatorSpec> estimators = cfg.estimators;
  auto ensure = [&](const EstimatorSpec& s) {
    if (std::find(estimators.begin(), estimators.end(), s) == estimators.end()) {
      estimators.push_back(s);
    }
  };
  ensure(EstimatorSpec::parse("nipw"));
  for (const auto& e : cfg.estimators) {
    if (e.weighting == WeightKind::kGaw) {
      ensure({WeightKind::kIpw, e.augmented, e.normalized});
    }
  }
  const Regime base = default_regime(cfg.dgp.kind);
  StudyResult result;
  result.grid = cfg.grid;
  result.cells = grid_cells(cfg.grid);
  result.truth = true_value_surface(cfg.dgp, base, result.cells, cfg.truth_mc, derive_seed(cfg.seed, {5}),
                                    cfg.threads);
  std::vector<std::optional<double>> truth_opt(result.truth.begin(), result.truth.end());
  const auto best = locate_optimum(result.cells, truth_opt);
  require(best.has_value(), "true value surface is empty");
  result.true_psi = best->psi;
  result.true_value = best->value;

  Context ctx{cfg, estimators, base, result.cells, base.with_thresholds(best->psi), best->psi, 0};
  ctx.nipw = static_cast<std::size_t>(
      std::find(estimators.begin(), estimators.end(), EstimatorSpec::parse("nipw")) - estimators.begin());
  const std::size_t E = estimators.size();
  const std::size_t C = result.cells.size();
  const std::size_t A = cfg.grid.size();

  for (const auto n : cfg.sample_sizes) {
    std::vector<std::vector<CellAcc>> acc(E, std::vector<CellAcc>(C));
    std::vector<std::vector<std::vector<double>>> psi(E);
    std::vector<Welford> pot(E), value(E);
    std::vector<std::vector<Welford>> covered(E, std::vector<Welford>(A));
    std::vector<std::pair<Welford, Welford>> balance;
    std::vector<std::pair<std::size_t, std::string>> balance_keys;

    const std::size_t chunk = std::max<std::size_t>(8, 2 * static_cast<std::size_t>(cfg.threads));
    for (std::size_t start = 0; start < cfg.replications; start += chunk) {
      const std::size_t count = std::min(chunk, cfg.replications - start);
      std::vector<Replicate> reps(count);
      parallel_for(count, cfg.threads, [&](std::size_t k) { reps[k] = run_replicate(ctx, n, start + k); });
      // Fold in replicate order so results do not depend on scheduling.
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t r = start + k;
        auto& rep = reps[k];
        result.log.push_back({n, r, rep.ok ? "ok" : "failed", rep.gaw_c, rep.message});
        if (!rep.ok) {
          continue;
        }
        for (std::size_t e = 0; e < E; ++e) {
          for (std::size_t c = 0; c < C; ++c) {
            auto& a = acc[e][c];
            if (!rep.value[e][c]) {
              ++a.missing;
              continue;
            }
            const double v = *rep.value[e][c];
            a.value.add(v);
            a.squared_error += (v - result.truth[c]) * (v - result.truth[c]);
            add_opt(a.ess, rep.ess[e][c]);
            add_opt(a.analytic, rep.analytic[e][c]);
            if (rep.gap[e][c] && rep.bound[e][c]) {
              a.gap.add(*rep.gap[e][c]);
              a.bound.add(*rep.bound[e][c]);
            }
          }
          if (rep.psi[e]) {
            psi[e].push_back(*rep.psi[e]);
          }
          if (rep.metrics[e]) {
            pot[e].add(rep.metrics[e]->pot);
            value[e].add(rep.metrics[e]->value);
          }
          for (std::size_t ax = 0; ax < A; ++ax) {
            if (rep.covered[e][ax]) {
              covered[e][ax].add(*rep.covered[e][ax] ? 1.0 : 0.0);
            }
          }
        }
        for (const auto& [name, d] : rep.ess_difference) {
          result.ess_differences.push_back({n, r, name, d});
        }
        for (const auto& [kind, s] : rep.spread) {
          result.weight_spread.push_back({n, r, kind, s});
        }
        if (balance.empty()) {
          balance.resize(rep.smd.size());
        }
        for (std::size_t b = 0; b < rep.smd.size() && b < balance.size(); ++b) {
          balance[b].first.add(rep.smd[b].first);
          balance[b].second.add(rep.smd[b].second);
        }
      }
    }

    // Per-cell rows and surface averages.
    std::vector<std::vector<double>> cell_var(E, std::vector<double>(C, kNaN));
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> vars, biases, rmses, esses, analytics;
      std::size_t incomplete = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const auto& a = acc[e][c];
        incomplete += a.missing > 0 ? 1 : 0;
        CellRow row;
        row.n = n;
        row.method = estimators[e].name();
        row.psi = result.cells[c];
        row.truth = result.truth[c];
        row.count = a.value.count;
        if (a.value.count < 2) {
          row.mean = row.variance = row.bias = row.rmse = kNaN;
          result.cell_rows.push_back(std::move(row));
          continue;
        }
        row.mean = a.value.mean;
        row.variance = a.value.variance();
        row.bias = a.value.mean - result.truth[c];
        row.rmse = std::sqrt(a.squared_error / static_cast<double>(a.value.count));
        if (a.ess.count > 0) {
          row.ess = a.ess.mean;
          esses.push_back(a.ess.mean);
        }
        if (a.analytic.count > 0) {
          row.analytic_variance = a.analytic.mean;
          analytics.push_back(a.analytic.mean);
        }
        if (a.gap.count > 0) {
          row.gap_mean = a.gap.mean;
          row.bound_mean = a.bound.mean;
        }
        cell_var[e][c] = row.variance;
        vars.push_back(row.variance);
        biases.push_back(row.bias);
        rmses.push_back(row.rmse);
        result.cell_rows.push_back(std::move(row));
      }
      SurfaceSummaryRow s;
      s.n = n;
      s.method = estimators[e].name();
      const auto wv = over_cells(vars), wb = over_cells(biases), wr = over_cells(rmses), we = over_cells(esses);
      s.var_mean = wv.count ? wv.mean : kNaN;
      s.var_sd = wv.sd();
      s.bias_mean = wb.count ? wb.mean : kNaN;
      s.bias_sd = wb.sd();
      s.rmse_mean = wr.count ? wr.mean : kNaN;
      s.rmse_sd = wr.sd();
      if (we.count > 0) {
        s.ess_mean = we.mean;
        s.ess_sd = we.sd();
      }
      s.cells = C;
      s.incomplete_cells = incomplete;
      result.surface.push_back(s);
      if (estimators[e].normalized && !analytics.empty()) {
        const auto wa = over_cells(analytics);
        result.variance.push_back({n, estimators[e].name(), s.var_mean, s.var_sd, wa.mean, wa.sd(),
                                   wa.mean / s.var_mean});
      }
    }
    // Share of cells where each estimator's variance is below nIPW's.
    const std::size_t first_row = result.surface.size() - E;
    for (std::size_t e = 0; e < E; ++e) {
      if (e == ctx.nipw) {
        continue;
      }
      std::size_t both = 0;
      std::size_t below = 0;
      for (std::size_t c = 0; c < C; ++c) {
        if (std::isfinite(cell_var[e][c]) && std::isfinite(cell_var[ctx.nipw][c])) {
          ++both;
          below += cell_var[e][c] < cell_var[ctx.nipw][c] ? 1 : 0;
        }
      }
      if (both > 0) {
        result.surface[first_row + e].pct_var_reduction = 100.0 * static_cast<double>(below) / static_cast<double>(both);
      }
    }
    for (std::size_t e = 0; e < E; ++e) {
      ThresholdRow t;
      t.n = n;
      t.method = estimators[e].name();
      t.axes = summarize_thresholds(cfg.grid, psi[e]);
      for (std::size_t ax = 0; ax < A; ++ax) {
        t.coverage.push_back(covered[e][ax].count ? std::optional<double>(covered[e][ax].mean) : std::nullopt);
      }
      t.pot_mean = pot[e].count ? pot[e].mean : kNaN;
      t.pot_sd = pot[e].sd();
      t.value_mean = value[e].count ? value[e].mean : kNaN;
      t.value_sd = value[e].sd();
      t.replicates = psi[e].size();
      result.thresholds.push_back(std::move(t));
    }
    // Balance row labels follow the generator's stage layout.
    const Panel probe = generate(cfg.dgp, 2, 0);
    std::size_t b = 0;
    for (std::size_t st = 0; st < probe.stage_count(); ++st) {
      for (const auto& name : probe.stage(st).covariate_names) {
        if (b < balance.size()) {
          result.balance.push_back({n, st + 1, name, balance[b].first.mean, balance[b].second.mean});
        }
        ++b;
      }
    }
  }
  return result;
}

namespace {

using nlohmann::ordered_json;

std::string side_name(WindowSide s) {
  return s == WindowSide::kBoth ? "both" : (s == WindowSide::kLower ? "lower" : "upper");
}

WindowSide parse_side(const std::string& s) {
  if (s == "both") {
    return WindowSide::kBoth;
  }
  if (s == "lower") {
    return WindowSide::kLower;
  }
  if (s == "upper") {
    return WindowSide::kUpper;
  }
  fail(ErrorCode::kInvalidArgument, "unknown window side '" + s + "'");
}

const std::vector<std::string> kOutputs = {"surface_summary.csv", "threshold_summary.csv", "variance_comparison.csv",
                                           "surface_cells.csv",   "bias_bound.csv",        "ess_difference.csv",
                                           "weight_spread.csv",   "balance.csv",           "replicate_log.csv",
                                           "truth.csv",           "manifest.json"};

ordered_json to_json(const StudyConfig& c) {
  ordered_json j;
  j["schema_version"] = 1;
  j["kind"] = "study-manifest";
  ordered_json dgp;
  dgp["name"] = std::string(to_string(c.dgp.kind));
  dgp["noise_scale"] = c.dgp.noise == NoiseScale::kStandardDeviation ? "sd" : "variance";
  dgp["overrides"] = ordered_json::object();
  for (const auto& [k, v] : c.dgp.overrides) {
    dgp["overrides"][k] = v;
  }
  j["dgp"] = dgp;
  j["sample_sizes"] = c.sample_sizes;
  j["replications"] = c.replications;
  j["grid"] = ordered_json::array();
  for (const auto& a : c.grid) {
    j["grid"].push_back({{"name", a.name}, {"values", a.values}});
  }
  j["estimators"] = ordered_json::array();
  for (const auto& e : c.estimators) {
    j["estimators"].push_back(e.name());
  }
  j["gaw"] = {{"c", c.gaw.c}, {"k", c.gaw.k}, {"tuning", std::string(to_string(c.gaw_tuning))}, {"m", c.gaw_m}};
  ordered_json baw;
  baw["bootstrap"] = c.baw.bootstrap_count;
  baw["lambda_bias"] = c.baw.lambda_bias;
  baw["refit"] = c.baw.refit;
  baw["max_excluded_fraction"] = c.baw.max_excluded_fraction;
  baw["q"] = c.baw.q ? ordered_json(*c.baw.q) : ordered_json(nullptr);
  baw["axes"] = ordered_json::array();
  for (const auto& a : c.baw.axes) {
    baw["axes"].push_back(
        {{"stage", a.stage + 1}, {"clause", a.clause + 1}, {"side", side_name(a.side)}, {"values", a.values}});
  }
  j["baw"] = baw;
  j["truth_mc"] = c.truth_mc;
  j["external_n"] = c.external_n;
  j["coverage_bootstrap"] = c.coverage_bootstrap;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["outputs"] = kOutputs;
  j["conventions"] = {
      {"variance_across_replicates", "sample variance, divisor R-1"},
      {"rmse", "sqrt(mean((estimate - truth)^2)), divisor R"},
      {"surface_average", "mean over grid cells; the paired sd is across cells"},
      {"threshold_ci", "percentile bootstrap of the surface argmax (2.5%, 97.5%)"},
      {"argmax_ties", "lexicographically smallest threshold tuple"},
  };
  return j;
}

}  // namespace

std::string manifest_json(const StudyConfig& config) { return to_json(config.resolved()).dump(2) + "\n"; }

StudyConfig parse_manifest(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const std::exception& e) {
    fail(ErrorCode::kData, std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    require(j.at("schema_version").get<int>() == 1, "unsupported manifest schema_version");
    StudyConfig c;
    const auto& dgp = j.at("dgp");
    c.dgp.kind = parse_dgp_kind(dgp.at("name").get<std::string>());
    const auto scale = dgp.at("noise_scale").get<std::string>();
    require(scale == "sd" || scale == "variance", "noise_scale must be sd or variance");
    c.dgp.noise = scale == "sd" ? NoiseScale::kStandardDeviation : NoiseScale::kVariance;
    for (const auto& [k, v] : dgp.at("overrides").items()) {
      c.dgp.overrides[k] = v.get<double>();
    }
    c.sample_sizes = j.at("sample_sizes").get<std::vector<std::size_t>>();
    c.replications = j.at("replications").get<std::size_t>();
    c.grid.clear();
    for (const auto& a : j.at("grid")) {
      c.grid.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>()});
    }
    c.estimators.clear();
    for (const auto& e : j.at("estimators")) {
      c.estimators.push_back(EstimatorSpec::parse(e.get<std::string>()));
    }
    const auto& gaw = j.at("gaw");
    c.gaw = {gaw.at("c").get<double>(), gaw.at("k").get<double>()};
    c.gaw_tuning = parse_gaw_tuning(gaw.at("tuning").get<std::string>());
    c.gaw_m = gaw.at("m").get<double>();
    const auto& baw = j.at("baw");
    c.baw.bootstrap_count = baw.at("bootstrap").get<std::size_t>();
    c.baw.lambda_bias = baw.at("lambda_bias").get<double>();
    c.baw.refit = baw.at("refit").get<bool>();
    c.baw.max_excluded_fraction = baw.at("max_excluded_fraction").get<double>();
    if (!baw.at("q").is_null()) {
      c.baw.q = baw.at("q").get<double>();
    }
    for (const auto& a : baw.at("axes")) {
      const auto stage = a.at("stage").get<std::size_t>();
      const auto clause = a.at("clause").get<std::size_t>();
      require(stage >= 1 && clause >= 1, "window axes use 1-based stage and clause numbers");
      c.baw.axes.push_back({stage - 1, clause - 1, parse_side(a.at("side").get<std::string>()),
                            a.at("values").get<std::vector<double>>()});
    }
    c.truth_mc = j.at("truth_mc").get<std::size_t>();
    c.external_n = j.at("external_n").get<std::size_t>();
    c.coverage_bootstrap = j.at("coverage_bootstrap").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<unsigned>();
    return c.resolved();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kData, std::string("manifest is missing or mistypes a field: ") + e.what());
  }
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    fail(ErrorCode::kData, "cannot write " + path.string());
  }
  return out;
}

void footer(std::ostream& out) {
  out << "# Var: sample variance across replicates (divisor R-1); rMSE uses divisor R.\n";
  out << "# Surface averages are means over grid cells; the _sd columns are standard deviations across cells.\n";
}

}  // namespace

void write_study(const std::filesystem::path& dir, const StudyConfig& config, const StudyResult& result) {
  std::filesystem::create_directories(dir);
  const auto cfg = config.resolved();
  {
    auto out = open_out(dir / "surface_summary.csv");
    CsvWriter csv(out);
    csv.row({"n", "method", "var", "var_sd", "bias", "bias_sd", "rmse", "rmse_sd", "ess", "ess_sd",
             "pct_var_reduction_grid", "cells", "incomplete_cells"});
    for (const auto& s : result.surface) {
      csv.field(s.n).field(s.method).field(s.var_mean).field(s.var_sd).field(s.bias_mean).field(s.bias_sd);
      csv.field(s.rmse_mean).field(s.rmse_sd).field(s.ess_mean).field(s.ess_sd).field(s.pct_var_reduction);
      csv.field(s.cells).field(s.incomplete_cells).end_row();
    }
    footer(out);
  }
  {
    auto out = open_out(dir / "threshold_summary.csv");
    CsvWriter csv(out);
    csv.field("n").field("method");
    for (const auto& a : cfg.grid) {
      for (const char* suffix : {"_mean", "_sd", "_median", "_iqr", "_coverage"}) {
        csv.field(a.name + suffix);
      }
    }
    csv.row({"pot", "pot_sd", "value", "value_sd", "replicates"});
    for (const auto& t : result.thresholds) {
      csv.field(t.n).field(t.method);
      for (std::size_t a = 0; a < t.axes.size(); ++a) {
        csv.field(t.axes[a].mean).field(t.axes[a].sd).field(t.axes[a].median).field(t.axes[a].iqr);
        csv.field(t.coverage[a]);
      }
      csv.field(t.pot_mean).field(t.pot_sd).field(t.value_mean).field(t.value_sd).field(t.replicates).end_row();
    }
    out << "# True optimum:";
    for (std::size_t a = 0; a < result.true_psi.size(); ++a) {
      out << ' ' << cfg.grid[a].name << '=' << format_number(result.true_psi[a]);
    }
    out << " value=" << format_number(result.true_value) << '\n';
    out << "# Coverage: share of replicates whose percentile bootstrap CI of the argmax contains the true threshold.\n";
    footer(out);
  }
  {
    auto out = open_out(dir / "variance_comparison.csv");
    CsvWriter csv(out);
    csv.row({"n", "method", "mc_var", "mc_var_sd", "analytical_var", "analytical_var_sd", "ratio"});
    for (const auto& v : result.variance) {
      csv.field(v.n).field(v.method).field(v.mc_mean).field(v.mc_sd).field(v.analytic_mean).field(v.analytic_sd);
      csv.field(v.ratio).end_row();
    }
    out << "# BAW analytical variances ignore window selection and are heuristic.\n";
    footer(out);
  }
  auto cell_header = [&](CsvWriter& csv) {
    csv.field("n").field("method");
    for (const auto& a : cfg.grid) {
      csv.field(a.name);
    }
  };
  {
    auto out = open_out(dir / "surface_cells.csv");
    CsvWriter csv(out);
    cell_header(csv);
    csv.row({"truth", "replicates", "mean", "var", "bias", "rmse", "ess", "analytical_var"});
    for (const auto& r : result.cell_rows) {
      csv.field(r.n).field(r.method);
      for (const double p : r.psi) {
        csv.field(p);
      }
      csv.field(r.truth).field(r.count).field(r.mean).field(r.variance).field(r.bias).field(r.rmse);
      csv.field(r.ess).field(r.analytic_variance).end_row();
    }
    footer(out);
  }
  {
    auto out = open_out(dir / "bias_bound.csv");
    CsvWriter csv(out);
    cell_header(csv);
    csv.row({"mean_abs_gap", "mean_bound", "within_bound"});
    for (const auto& r : result.cell_rows) {
      if (!r.gap_mean) {
        continue;
      }
      csv.field(r.n).field(r.method);
      for (const double p : r.psi) {
        csv.field(p);
      }
      csv.field(r.gap_mean).field(r.bound_mean).field(*r.gap_mean <= *r.bound_mean ? "true" : "false").end_row();
    }
    out << "# Gap: |GAW - IPW| for the same augmentation and normalization; bound: (1 - min theta) * outcome range.\n";
  }
  {
    auto out = open_out(dir / "ess_difference.csv");
    CsvWriter csv(out);
    csv.row({"n", "replicate", "comparison", "mean_ess_difference"});
    for (const auto& r : result.ess_differences) {
      csv.field(r.n).field(r.replicate).field(r.comparison).field(r.mean_difference).end_row();
    }
  }
  {
    auto out = open_out(dir / "weight_spread.csv");
    CsvWriter csv(out);
    csv.row({"n", "replicate", "weighting", "p99_minus_p1"});
    for (const auto& r : result.weight_spread) {
      csv.field(r.n).field(r.replicate).field(r.weighting).field(r.spread).end_row();
    }
    out << "# Positive terminal weights at the true optimal regime.\n";
  }
  {
    auto out = open_out(dir / "balance.csv");
    CsvWriter csv(out);
    csv.row({"n", "stage", "covariate", "smd_unweighted", "smd_weighted"});
    for (const auto& r : result.balance) {
      csv.field(r.n).field(r.stage).field(r.covariate).field(r.smd_unweighted).field(r.smd_weighted).end_row();
    }
    out << "# Mean over replicates; weighted uses inverse estimated propensity of the observed treatment.\n";
  }
  {
    auto out = open_out(dir / "replicate_log.csv");
    CsvWriter csv(out);
    csv.row({"n", "replicate", "status", "gaw_c", "message"});
    for (const auto& r : result.log) {
      csv.field(r.n).field(r.replicate).field(r.status).field(r.gaw_c).field(r.message).end_row();
    }
  }
  {
    auto out = open_out(dir / "truth.csv");
    CsvWriter csv(out);
    for (const auto& a : cfg.grid) {
      csv.field(a.name);
    }
    csv.field("value").end_row();
    for (std::size_t c = 0; c < result.cells.size(); ++c) {
      for (const double p : result.cells[c]) {
        csv.field(p);
      }
      csv.field(result.truth[c]).end_row();
    }
  }
  {
    auto out = open_out(dir / "manifest.json");
    out << manifest_json(cfg);
  }
}

}  // namespace dtr
