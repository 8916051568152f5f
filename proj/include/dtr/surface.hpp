#ifndef DTR_SURFACE_HPP
#define DTR_SURFACE_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dtr/baw_select.hpp"
#include "dtr/estimators.hpp"
#include "dtr/glm.hpp"
#include "dtr/panel.hpp"
#include "dtr/regime.hpp"
#include "dtr/weighting.hpp"

namespace dtr {

struct DgpSpec;

struct EstimationSettings {
  NuisanceSpecs nuisance;
  GawConfig gaw;
  BawConfig baw;
  std::uint64_t seed = 0;  // BAW bootstrap resamples
};

/// One estimator's result for one regime; `estimate` is empty when the
/// estimator is undefined there, with the error code name in missing_reason.
struct CellEstimate {
  EstimatorSpec estimator;
  std::optional<ValueEstimate> estimate;
  std::string missing_reason;
  std::string message;
  std::optional<double> bias_bound;  // GAW kinds only
};

/**
 * Fits the nuisance models of one panel once and evaluates any regime
 * against them. Propensities, the stagewise Q regressions and the BAW
 * bootstrap resamples are shared by every regime; the Q recursion, weights
 * and window search are redone per regime. evaluate() is thread-safe.
 */
class RegimeEvaluator {
 public:
  RegimeEvaluator(const Panel& panel, EstimationSettings settings, std::vector<EstimatorSpec> estimators);

  [[nodiscard]] std::vector<CellEstimate> evaluate(const Regime& regime) const;
  [[nodiscard]] const std::vector<EstimatorSpec>& estimators() const { return estimators_; }
  [[nodiscard]] const PropensityFit& propensities() const { return propensities_; }
  [[nodiscard]] const EstimationSettings& settings() const { return settings_; }
  [[nodiscard]] const Panel& panel() const { return *panel_; }

 private:
  const Panel* panel_;
  EstimationSettings settings_;
  std::vector<EstimatorSpec> estimators_;
  PropensityFit propensities_;
  std::optional<QFunctionCache> q_cache_;
  BootstrapPlan plan_;
  double outcome_range_ = 0.0;
};

/// Fits everything and evaluates one estimator; throws the estimator's error
/// instead of returning a missing cell.
ValueEstimate estimate(const Panel& panel, const Regime& regime, const EstimatorSpec& estimator,
                       const EstimationSettings& settings);

/// Candidate values of one threshold; axes map onto the regime's clauses in
/// stage-major order.
struct GridAxis {
  std::string name;
  std::vector<double> values;
};

/// from, from + step, ... up to `to` (inclusive within 1e-9 of a step).
std::vector<double> grid_values(double from, double to, double step);

/// Lexicographic cartesian product of the axes, first axis slowest.
std::vector<std::vector<double>> grid_cells(const std::vector<GridAxis>& axes);

struct SurfaceOptimum {
  std::size_t cell = 0;
  std::vector<double> psi;
  double value = 0.0;
};

struct ValueSurface {
  std::vector<GridAxis> axes;
  std::vector<EstimatorSpec> estimators;
  std::vector<std::vector<double>> cells;
  std::vector<std::vector<CellEstimate>> results;  // [cell][estimator]
  std::vector<std::optional<SurfaceOptimum>> optima;  // per estimator

  [[nodiscard]] std::size_t estimator_index(const EstimatorSpec& spec) const;
};

/// Largest defined value; ties go to the earliest (lexicographically
/// smallest) cell.
std::optional<SurfaceOptimum> locate_optimum(const std::vector<std::vector<double>>& cells,
                                             const std::vector<std::optional<double>>& values);

ValueSurface evaluate_surface(const RegimeEvaluator& evaluator, const Regime& base,
                              const std::vector<GridAxis>& axes, unsigned threads = 1);

ValueSurface evaluate_surface(const Panel& panel, const Regime& base, const std::vector<GridAxis>& axes,
                              const std::vector<EstimatorSpec>& estimators, const EstimationSettings& settings,
                              unsigned threads = 1);

/// Long format: one row per (cell, estimator).
void write_surface_csv(std::ostream& out, const ValueSurface& surface);

struct ThresholdSummary {
  std::string axis;
  double mean = 0.0;
  double sd = 0.0;  // divisor N - 1
  double median = 0.0;
  double iqr = 0.0;
  double ci_lower = 0.0;  // 2.5th percentile
  double ci_upper = 0.0;  // 97.5th percentile
};

struct ThresholdBootstrap {
  std::vector<std::vector<double>> argmax;  // one tuple per retained replicate
  std::size_t dropped = 0;
  std::vector<ThresholdSummary> summary;
  std::string method = "percentile bootstrap of the surface argmax";
};

/// Summaries of a set of argmax tuples (one marginal per axis).
std::vector<ThresholdSummary> summarize_thresholds(const std::vector<GridAxis>& axes,
                                                   const std::vector<std::vector<double>>& argmax);

/**
 * Resamples individuals B times, refits every nuisance model on each
 * resample, re-evaluates the surface for `estimator` and records its argmax.
 */
ThresholdBootstrap bootstrap_thresholds(const Panel& panel, const Regime& base, const std::vector<GridAxis>& axes,
                                        const EstimatorSpec& estimator, const EstimationSettings& settings,
                                        std::size_t replicates, std::uint64_t seed, unsigned threads = 1);

struct RegimeMetrics {
  double pot = 0.0;             // fraction assigned as the true rule would at every stage
  double value = 0.0;           // mean outcome when following the estimated rule
  double value_se = 0.0;
};

/// External-sample evaluation of an estimated rule; simulation only.
RegimeMetrics regime_metrics(const Regime& estimated, const Regime& truth, const DgpSpec& dgp, std::size_t n_ext,
                             std::uint64_t seed);

}  // namespace dtr

#endif  // DTR_SURFACE_HPP
