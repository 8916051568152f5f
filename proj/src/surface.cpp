#include "dtr/surface.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "dtr/csv.hpp"
#include "dtr/error.hpp"
#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"
#include "dtr/simgen.hpp"

namespace dtr {

RegimeEvaluator::RegimeEvaluator(const Panel& panel, EstimationSettings settings, std::vector<EstimatorSpec> estimators)
    : panel_(&panel), settings_(std::move(settings)), estimators_(std::move(estimators)) {
  require(!estimators_.empty(), "no estimators requested");
  settings_.nuisance = settings_.nuisance.resolved(panel);
  bool augmented = false;
  bool baw = false;
  for (const auto& e : estimators_) {
    augmented = augmented || e.augmented;
    if (e.weighting == WeightKind::kGaw) {
      settings_.gaw.validate(panel.size());
    }
    baw = baw || e.weighting == WeightKind::kBaw;
  }
  propensities_ = fit_propensities(panel, settings_.nuisance.propensity, settings_.nuisance.clamp,
                                   settings_.nuisance.irls);
  if (augmented) {
    q_cache_.emplace(panel, settings_.nuisance.outcome);
  }
  if (baw) {
    settings_.baw.validate();
    plan_ = BootstrapPlan::draw(panel.size(), settings_.baw.bootstrap_count, settings_.seed);
  }
  const auto& y = panel.outcome();
  outcome_range_ = y.maxCoeff() - y.minCoeff();
}

namespace {

// Weights computed at most once per regime; a failure is replayed to every
// estimator that needs it.
struct LazyWeights {
  std::optional<WeightSeries> series;
  std::exception_ptr error;
  bool done = false;

  template <class F>
  const WeightSeries& get(F&& make) {
    if (!done) {
      done = true;
      try {
        series = make();
      } catch (const Error&) {
        error = std::current_exception();
      }
    }
    if (error) {
      std::rethrow_exception(error);
    }
    return *series;
  }
};

}  // namespace

std::vector<CellEstimate> RegimeEvaluator::evaluate(const Regime& regime) const {
  const Panel& panel = *panel_;
  const auto& table = propensities_.table;
  std::optional<std::vector<Eigen::VectorXd>> q_values;
  LazyWeights ipw;
  LazyWeights gaw;
  LazyWeights baw_plain;
  LazyWeights baw_aug;

  auto baw_for = [&](bool augmented) -> const WeightSeries& {
    auto& slot = augmented ? baw_aug : baw_plain;
    return slot.get([&] {
      auto config = settings_.baw;
      config.augmented = augmented;
      const auto search = select_window(panel, regime, config, plan_, settings_.nuisance, table,
                                        q_cache_ ? &*q_cache_ : nullptr);
      return baw_weights(panel, regime, search.best().window, table);
    });
  };

  std::vector<CellEstimate> out(estimators_.size());
  for (std::size_t e = 0; e < estimators_.size(); ++e) {
    const auto& spec = estimators_[e];
    auto& cell = out[e];
    cell.estimator = spec;
    try {
      if (spec.augmented && !q_values) {
        q_values = q_cache_->evaluate(panel, regime).values;
      }
      const WeightSeries* w = nullptr;
      switch (spec.weighting) {
        case WeightKind::kIpw:
          w = &ipw.get([&] { return ipw_weights(panel, regime, table); });
          break;
        case WeightKind::kGaw:
          w = &gaw.get([&] { return gaw_weights(panel, regime, table, settings_.gaw); });
          break;
        case WeightKind::kBaw:
          w = &baw_for(spec.augmented);
          break;
      }
      auto value = spec.augmented ? value_augmented(panel, *w, *q_values, spec.normalized)
                                  : value_ipw(panel, *w, spec.normalized);
      value.diagnostics.clamp_events = table.clamp_events;
      if (spec.weighting == WeightKind::kGaw) {
        const auto& theta = w->gaw->theta;
        cell.bias_bound = bias_bound({theta.data(), static_cast<std::size_t>(theta.size())}, outcome_range_);
      }
      cell.estimate = std::move(value);
    } catch (const Error& err) {
      cell.missing_reason = std::string(to_string(err.code()));
      cell.message = err.what();
    }
  }
  return out;
}

ValueEstimate estimate(const Panel& panel, const Regime& regime, const EstimatorSpec& estimator,
                       const EstimationSettings& settings) {
  const RegimeEvaluator evaluator(panel, settings, {estimator});
  auto cells = evaluator.evaluate(regime);
  auto& cell = cells.front();
  if (!cell.estimate) {
    ErrorCode code = ErrorCode::kNumerical;
    for (const auto c : {ErrorCode::kInvalidArgument, ErrorCode::kData, ErrorCode::kNoAdherers,
                         ErrorCode::kSeparation, ErrorCode::kDisqualifiedWindow, ErrorCode::kNumerical}) {
      if (to_string(c) == cell.missing_reason) {
        code = c;
      }
    }
    fail(code, cell.message);
  }
  return std::move(*cell.estimate);
}

std::vector<double> grid_values(double from, double to, double step) {
  require(std::isfinite(from) && std::isfinite(to) && to >= from, "grid range must satisfy from <= to");
  require(std::isfinite(step) && step > 0.0, "grid step must be positive");
  std::vector<double> out;
  for (std::size_t m = 0;; ++m) {
    const double v = from + static_cast<double>(m) * step;
    if (v > to + 1e-9 * step) {
      break;
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<double>> grid_cells(const std::vector<GridAxis>& axes) {
  require(!axes.empty(), "grid has no axes");
  std::vector<std::vector<double>> cells{{}};
  for (const auto& axis : axes) {
    require(!axis.values.empty(), "grid axis '" + axis.name + "' has no values");
    std::vector<std::vector<double>> next;
    next.reserve(cells.size() * axis.values.size());
    for (const auto& prefix : cells) {
      for (const double v : axis.values) {
        auto c = prefix;
        c.push_back(v);
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

std::size_t ValueSurface::estimator_index(const EstimatorSpec& spec) const {
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    if (estimators[e] == spec) {
      return e;
    }
  }
  fail(ErrorCode::kInvalidArgument, "estimator " + spec.name() + " is not part of this surface");
}

std::optional<SurfaceOptimum> locate_optimum(const std::vector<std::vector<double>>& cells,
                                             const std::vector<std::optional<double>>& values) {
  require(cells.size() == values.size(), "cells and values differ in length");
  std::optional<SurfaceOptimum> best;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (values[c] && (!best || *values[c] > best->value)) {
      best = SurfaceOptimum{c, cells[c], *values[c]};
    }
  }
  return best;
}

ValueSurface evaluate_surface(const RegimeEvaluator& evaluator, const Regime& base,
                              const std::vector<GridAxis>& axes, unsigned threads) {
  require(axes.size() == base.clause_count(), "grid needs one axis per regime clause (" +
                                                  std::to_string(base.clause_count()) + ")");
  ValueSurface surface;
  surface.axes = axes;
  surface.estimators = evaluator.estimators();
  surface.cells = grid_cells(axes);
  surface.results.resize(surface.cells.size());
  parallel_for(surface.cells.size(), threads, [&](std::size_t c) {
    surface.results[c] = evaluator.evaluate(base.with_thresholds(surface.cells[c]));
  });
  for (std::size_t e = 0; e < surface.estimators.size(); ++e) {
    std::vector<std::optional<double>> values(surface.cells.size());
    for (std::size_t c = 0; c < surface.cells.size(); ++c) {
      if (const auto& est = surface.results[c][e].estimate) {
        values[c] = est->value;
      }
    }
    surface.optima.push_back(locate_optimum(surface.cells, values));
  }
  return surface;
}

ValueSurface evaluate_surface(const Panel& panel, const Regime& base, const std::vector<GridAxis>& axes,
                              const std::vector<EstimatorSpec>& estimators, const EstimationSettings& settings,
                              unsigned threads) {
  const RegimeEvaluator evaluator(panel, settings, estimators);
  return evaluate_surface(evaluator, base, axes, threads);
}

void write_surface_csv(std::ostream& out, const ValueSurface& surface) {
  CsvWriter csv(out);
  for (const auto& axis : surface.axes) {
    csv.field(axis.name);
  }
  for (const char* h : {"estimator", "value", "variance", "ess", "bias_bound", "window_max", "missing_reason"}) {
    csv.field(h);
  }
  csv.end_row();
  for (std::size_t c = 0; c < surface.cells.size(); ++c) {
    for (std::size_t e = 0; e < surface.estimators.size(); ++e) {
      for (const double v : surface.cells[c]) {
        csv.field(v);
      }
      const auto& cell = surface.results[c][e];
      csv.field(cell.estimator.name());
      if (cell.estimate) {
        const auto& est = *cell.estimate;
        csv.field(est.value).field(est.variance).field(est.ess).field(cell.bias_bound);
        csv.field(est.diagnostics.window ? std::optional<double>(est.diagnostics.window->max_abs()) : std::nullopt);
        csv.field("");
      } else {
        csv.field("NA").field("NA").field("NA").field("NA").field("NA").field(cell.missing_reason);
      }
      csv.end_row();
    }
  }
}

std::vector<ThresholdSummary> summarize_thresholds(const std::vector<GridAxis>& axes,
                                                   const std::vector<std::vector<double>>& argmax) {
  std::vector<ThresholdSummary> out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t a = 0; a < axes.size(); ++a) {
    ThresholdSummary s{axes[a].name, nan, nan, nan, nan, nan, nan};
    if (!argmax.empty()) {
      std::vector<double> v;
      v.reserve(argmax.size());
      for (const auto& t : argmax) {
        v.push_back(t.at(a));
      }
      double sum = 0.0;
      for (const double x : v) {
        sum += x;
      }
      s.mean = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (const double x : v) {
        ss += (x - s.mean) * (x - s.mean);
      }
      s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      s.median = percentile(v, 50.0);
      s.iqr = percentile(v, 75.0) - percentile(v, 25.0);
      s.ci_lower = percentile(v, 2.5);
      s.ci_upper = percentile(v, 97.5);
    }
    out.push_back(std::move(s));
  }
  return out;
}

ThresholdBootstrap bootstrap_thresholds(const Panel& panel, const Regime& base, const std::vector<GridAxis>& axes,
                                        const EstimatorSpec& estimator, const EstimationSettings& settings,
                                        std::size_t replicates, std::uint64_t seed, unsigned threads) {
  require(replicates >= 1, "bootstrap_thresholds needs at least one replicate");
  const auto plan = BootstrapPlan::draw(panel.size(), replicates, seed);
  std::vector<std::optional<std::vector<double>>> found(replicates);
  parallel_for(replicates, threads, [&](std::size_t b) {
    const Panel sub = panel.subset(plan.rows[b]);
    auto local = settings;
    local.seed = derive_seed(seed, {b, 1});
    try {
      const RegimeEvaluator evaluator(sub, local, {estimator});
      const auto surface = evaluate_surface(evaluator, base, axes, 1);
      if (surface.optima.front()) {
        found[b] = surface.optima.front()->psi;
      }
    } catch (const Error&) {
      // Nuisance fit failed on this resample; counted as dropped.
    }
  });
  ThresholdBootstrap out;
  for (auto& f : found) {
    if (f) {
      out.argmax.push_back(std::move(*f));
    } else {
      ++out.dropped;
    }
  }
  out.summary = summarize_thresholds(axes, out.argmax);
  return out;
}

RegimeMetrics regime_metrics(const Regime& estimated, const Regime& truth, const DgpSpec& dgp, std::size_t n_ext,
                             std::uint64_t seed) {
  const auto r = rollout(dgp, estimated, n_ext, seed, &truth);
  return {r.match_fraction.value_or(0.0), r.mean, r.standard_error};
}

}  // namespace dtr
