#include "dtr/baw_select.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "dtr/csv.hpp"
#include "dtr/error.hpp"
#include "dtr/estimators.hpp"
#include "dtr/rng.hpp"
#include "dtr/weighting.hpp"

namespace dtr {

double delta_max(double lo, double hi, double q) {
  require(std::isfinite(lo) && std::isfinite(hi) && hi > lo, "delta_max: covariate range is degenerate");
  require(std::isfinite(q) && q > 0.0, "delta_max: q must be positive");
  return (hi - lo) / q;
}

std::vector<double> window_axis_values(double step, double delta_max) {
  require(std::isfinite(step) && step > 0.0, "window step must be positive");
  require(step <= delta_max * (1.0 + 1e-12), "window step exceeds the maximum half-width");
  std::vector<double> values{0.0};
  for (std::size_t m = 1;; ++m) {
    const double v = static_cast<double>(m) * step;
    if (v > delta_max + 1e-9) {
      break;
    }
    values.push_back(v);
  }
  return values;
}

WindowGrid::WindowGrid(std::vector<WindowAxis> axes) : axes_(std::move(axes)) {
  require(!axes_.empty(), "window grid needs at least one axis");
  for (auto& axis : axes_) {
    require(!axis.values.empty(), "window axis has no values");
    for (const double v : axis.values) {
      require(std::isfinite(v) && v >= 0.0, "window tolerances must be finite and non-negative");
    }
    std::sort(axis.values.begin(), axis.values.end());
    axis.values.erase(std::unique(axis.values.begin(), axis.values.end()), axis.values.end());
    require(axis.values.front() == 0.0, "every window axis must contain 0");
  }
  tuples_.push_back({});
  for (const auto& axis : axes_) {
    std::vector<std::vector<double>> next;
    next.reserve(tuples_.size() * axis.values.size());
    for (const auto& prefix : tuples_) {
      for (const double v : axis.values) {
        auto t = prefix;
        t.push_back(v);
        next.push_back(std::move(t));
      }
    }
    tuples_ = std::move(next);
  }
}

WindowSpec WindowGrid::window(const Regime& regime, std::size_t g) const {
  std::vector<std::vector<Tolerance>> tol(regime.stage_count());
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    tol[t].resize(regime.clauses(t).size());
  }
  const auto& values = tuple(g);
  for (std::size_t a = 0; a < axes_.size(); ++a) {
    const auto& axis = axes_[a];
    require(axis.stage < tol.size() && axis.clause < tol[axis.stage].size(),
            "window axis refers to a clause the regime does not have");
    auto& slot = tol[axis.stage][axis.clause];
    if (axis.side != WindowSide::kUpper) {
      slot.lower = values[a];
    }
    if (axis.side != WindowSide::kLower) {
      slot.upper = values[a];
    }
  }
  return WindowSpec(std::move(tol));
}

WindowGrid build_grid(const Regime& regime, const std::vector<std::vector<double>>& steps,
                      const std::vector<std::vector<double>>& delta_max) {
  require(steps.size() == regime.stage_count() && delta_max.size() == regime.stage_count(),
          "build_grid: one step list and one delta_max list per stage");
  std::vector<WindowAxis> axes;
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    require(steps[t].size() == regime.clauses(t).size() && delta_max[t].size() == regime.clauses(t).size(),
            "build_grid: one step and one delta_max per clause");
    for (std::size_t k = 0; k < steps[t].size(); ++k) {
      axes.push_back({t, k, WindowSide::kBoth, window_axis_values(steps[t][k], delta_max[t][k])});
    }
  }
  return WindowGrid(std::move(axes));
}

void BawConfig::validate() const {
  require(bootstrap_count >= 2, "BAW needs at least two bootstrap replicates");
  require(!axes.empty(), "BAW window grid is empty");
  require(std::isfinite(lambda_bias) && lambda_bias >= 0.0, "lambda_bias must be non-negative");
  require(max_excluded_fraction >= 0.0 && max_excluded_fraction <= 1.0, "max_excluded_fraction must lie in [0, 1]");
  require(!q || (std::isfinite(*q) && *q > 0.0), "q must be positive");
}

BootstrapPlan BootstrapPlan::draw(std::size_t n, std::size_t replicates, std::uint64_t seed) {
  require(n > 0, "bootstrap of an empty sample");
  BootstrapPlan plan;
  plan.rows.resize(replicates);
  for (std::size_t b = 0; b < replicates; ++b) {
    Rng rng(derive_seed(seed, {b}));
    auto& rows = plan.rows[b];
    rows.resize(n);
    for (auto& r : rows) {
      r = static_cast<std::size_t>(rng.index(n));
    }
  }
  return plan;
}

NuisanceSpecs NuisanceSpecs::resolved(const Panel& panel) const {
  NuisanceSpecs out = *this;
  if (out.propensity.empty()) {
    for (std::size_t t = 0; t < panel.stage_count(); ++t) {
      out.propensity.push_back(default_propensity_spec(panel, t));
    }
  }
  if (out.outcome.empty()) {
    for (std::size_t t = 0; t < panel.stage_count(); ++t) {
      out.outcome.push_back(default_outcome_spec(panel, t));
    }
  }
  require(out.propensity.size() == panel.stage_count() && out.outcome.size() == panel.stage_count(),
          "one propensity and one outcome spec per stage");
  return out;
}

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

// Normalized statistic on one resample, or nullopt without adherers.
template <class F>
std::optional<double> guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNoAdherers) {
      return std::nullopt;
    }
    throw;
  }
}

}  // namespace

WindowSearchResult select_window(const Panel& panel, const Regime& regime, const BawConfig& config,
                                 const BootstrapPlan& plan, const NuisanceSpecs& specs,
                                 const PropensityTable& propensities, const QFunctionCache* q_cache) {
  config.validate();
  require(plan.size() >= 2, "BAW needs at least two bootstrap replicates");
  require(!config.augmented || q_cache != nullptr, "augmented window selection needs fitted Q-functions");
  const WindowGrid grid(config.axes);
  const auto bounds = clause_bounds(regime, panel);
  std::vector<std::vector<double>> caps;
  if (config.q) {
    caps.resize(regime.stage_count());
    for (std::size_t t = 0; t < regime.stage_count(); ++t) {
      for (const auto& b : bounds[t]) {
        caps[t].push_back(b.hi > b.lo ? delta_max(b.lo, b.hi, *config.q) : 0.0);
      }
    }
  }

  WindowSearchResult result;
  result.bootstrap_count = plan.size();
  result.lambda_bias = config.lambda_bias;
  result.augmented = config.augmented;

  // Reference: the strict estimator on the original sample.
  std::vector<Eigen::VectorXd> q_full;
  if (config.augmented) {
    q_full = q_cache->evaluate(panel, regime).values;
  }
  const auto strict = ipw_weights(panel, regime, propensities);
  result.reference = config.augmented ? augmented_value(strict.cumulative, q_full, true)
                                      : plain_value(as_span(strict.terminal()), as_span(panel.outcome()), true);

  const std::size_t G = grid.size();
  result.candidates.resize(G);
  std::vector<WeightSeries> full_weights(G);
  for (std::size_t g = 0; g < G; ++g) {
    auto& cand = result.candidates[g];
    cand.delta = grid.tuple(g);
    cand.window = grid.window(regime, g);
    cand.admissible = window_admissible(regime, cand.window, bounds, caps);
    if (!cand.admissible) {
      cand.note = "outside directional constraints";
    } else if (!config.refit) {
      full_weights[g] = baw_weights(panel, regime, cand.window, propensities);
    }
  }

  const std::size_t B = plan.size();
  std::vector<std::vector<std::optional<double>>> stats(G, std::vector<std::optional<double>>(B));
  for (std::size_t b = 0; b < B; ++b) {
    const auto& rows = plan.rows[b];
    if (config.refit) {
      const Panel sub = panel.subset(rows);
      const auto props = fit_propensities(sub, specs.propensity, specs.clamp, specs.irls).table;
      std::vector<Eigen::VectorXd> q_sub;
      if (config.augmented) {
        q_sub = QFunctionCache(sub, specs.outcome).evaluate(sub, regime).values;
      }
      for (std::size_t g = 0; g < G; ++g) {
        if (!result.candidates[g].admissible) {
          continue;
        }
        stats[g][b] = guarded([&] {
          const auto w = baw_weights(sub, regime, result.candidates[g].window, props);
          return config.augmented ? augmented_value(w.cumulative, q_sub, true)
                                  : plain_value(as_span(w.terminal()), as_span(sub.outcome()), true);
        });
      }
      continue;
    }
    const Eigen::VectorXd y = gather(panel.outcome(), rows);
    std::vector<Eigen::VectorXd> q_b;
    for (const auto& q : q_full) {
      q_b.push_back(gather(q, rows));
    }
    for (std::size_t g = 0; g < G; ++g) {
      if (!result.candidates[g].admissible) {
        continue;
      }
      stats[g][b] = guarded([&] {
        if (config.augmented) {
          return augmented_value(gather_rows(full_weights[g].cumulative, rows), q_b, true);
        }
        const Eigen::VectorXd w = gather(full_weights[g].terminal(), rows);
        return plain_value(as_span(w), as_span(y), true);
      });
    }
  }

  std::optional<std::size_t> best;
  for (std::size_t g = 0; g < G; ++g) {
    auto& cand = result.candidates[g];
    if (!cand.admissible) {
      continue;
    }
    double sum = 0.0;
    for (const auto& s : stats[g]) {
      if (s) {
        sum += *s;
        ++cand.used;
      } else {
        ++cand.excluded;
      }
    }
    const double excluded_fraction = static_cast<double>(cand.excluded) / static_cast<double>(B);
    if (excluded_fraction > config.max_excluded_fraction || cand.used < 2) {
      cand.disqualified = true;
      cand.note = std::to_string(cand.excluded) + " of " + std::to_string(B) + " replicates without adherers";
      continue;
    }
    cand.mean = sum / static_cast<double>(cand.used);
    double ss = 0.0;
    for (const auto& s : stats[g]) {
      if (s) {
        ss += (*s - cand.mean) * (*s - cand.mean);
      }
    }
    cand.variance = ss / static_cast<double>(cand.used - 1);
    cand.bias = cand.mean - result.reference;
    cand.loss = cand.variance + config.lambda_bias * cand.bias * cand.bias;
    if (!best || cand.loss < result.candidates[*best].loss) {
      best = g;
    }
  }
  if (!best) {
    fail(ErrorCode::kDisqualifiedWindow, "every window candidate was disqualified");
  }
  result.optimum = *best;
  return result;
}

WindowSearchResult select_window(const Panel& panel, const Regime& regime, const BawConfig& config,
                                 std::uint64_t seed, const NuisanceSpecs& specs) {
  const auto resolved = specs.resolved(panel);
  const auto props = fit_propensities(panel, resolved.propensity, resolved.clamp, resolved.irls);
  std::optional<QFunctionCache> cache;
  if (config.augmented) {
    cache.emplace(panel, resolved.outcome);
  }
  const auto plan = BootstrapPlan::draw(panel.size(), config.bootstrap_count, seed);
  return select_window(panel, regime, config, plan, resolved, props.table, cache ? &*cache : nullptr);
}

void write_window_csv(std::ostream& out, const WindowSearchResult& result) {
  CsvWriter csv(out);
  csv.field("candidate");
  if (!result.candidates.empty()) {
    const auto& window = result.candidates.front().window;
    for (std::size_t t = 0; t < window.stage_count(); ++t) {
      for (std::size_t k = 0; k < window.stage(t).size(); ++k) {
        const auto base = "s" + std::to_string(t + 1) + "_c" + std::to_string(k + 1);
        csv.field("delta_lower_" + base).field("delta_upper_" + base);
      }
    }
  }
  for (const char* h : {"admissible", "used", "excluded", "disqualified", "mean", "variance", "bias", "loss",
                        "selected", "note"}) {
    csv.field(h);
  }
  csv.end_row();
  for (std::size_t g = 0; g < result.candidates.size(); ++g) {
    const auto& c = result.candidates[g];
    csv.field(g);
    for (std::size_t t = 0; t < c.window.stage_count(); ++t) {
      for (const auto& tol : c.window.stage(t)) {
        csv.field(tol.lower).field(tol.upper);
      }
    }
    const bool scored = c.admissible && !c.disqualified;
    csv.field(c.admissible ? "true" : "false").field(c.used).field(c.excluded);
    csv.field(c.disqualified ? "true" : "false");
    if (scored) {
      csv.field(c.mean).field(c.variance).field(c.bias).field(c.loss);
    } else {
      csv.field("NA").field("NA").field("NA").field("NA");
    }
    csv.field(g == result.optimum ? "true" : "false").field(c.note);
    csv.end_row();
  }
}

}  // namespace dtr
