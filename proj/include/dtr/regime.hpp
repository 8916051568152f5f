#ifndef DTR_REGIME_HPP
#define DTR_REGIME_HPP

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dtr/panel.hpp"

namespace dtr {

enum class Direction {
  kLessEqual,     // treat if X <= psi
  kGreaterEqual,  // treat if X >= psi
};

/// One threshold comparison on a stage-t covariate column.
struct Clause {
  std::size_t covariate = 0;
  double threshold = 0.0;
  Direction direction = Direction::kLessEqual;

  /// Inclusive on the treat side: X == psi satisfies both directions.
  [[nodiscard]] bool holds(double x) const {
    return direction == Direction::kLessEqual ? x <= threshold : x >= threshold;
  }
};

/**
 * Threshold-based dynamic treatment regime. Each stage carries one list of
 * clauses combined by conjunction: the regime recommends `treat_action` iff
 * every clause holds, `control_action` otherwise.
 */
class Regime {
 public:
  Regime(std::vector<std::vector<Clause>> stages, int treat_action = kTreat, int control_action = kControl);

  [[nodiscard]] std::size_t stage_count() const { return stages_.size(); }
  [[nodiscard]] const std::vector<Clause>& clauses(std::size_t t) const { return stages_.at(t); }
  [[nodiscard]] int treat_action() const { return treat_action_; }
  [[nodiscard]] int control_action() const { return control_action_; }

  /// Total number of clauses over all stages, i.e. the dimension of psi.
  [[nodiscard]] std::size_t clause_count() const;

  /// Thresholds in stage-major clause order.
  [[nodiscard]] std::vector<double> thresholds() const;

  /// Same structure with thresholds replaced (stage-major clause order).
  [[nodiscard]] Regime with_thresholds(std::span<const double> psi) const;

  /// Every direction flipped and the two actions swapped.
  [[nodiscard]] Regime complement() const;

  /// Throws if a clause index is outside `row`.
  [[nodiscard]] int recommend(std::size_t t, std::span<const double> row) const;

 private:
  std::vector<std::vector<Clause>> stages_;
  int treat_action_;
  int control_action_;
};

/// Checks the regime against a panel: stage count and clause indices are hard
/// errors; thresholds outside the observed covariate range are returned as
/// warnings.
std::vector<std::string> validate_regime(const Regime& regime, const Panel& panel);

int recommended_action(const Regime& regime, const Panel& panel, std::size_t i, std::size_t t);

bool strict_adherence(const Regime& regime, const Panel& panel, std::size_t i, std::size_t t);

/// Directional tolerance around one clause threshold.
struct Tolerance {
  double lower = 0.0;
  double upper = 0.0;

  friend bool operator==(const Tolerance&, const Tolerance&) = default;
};

/// Observed range of the covariate a clause compares against.
struct ClauseBounds {
  double lo = 0.0;
  double hi = 0.0;
};

/**
 * Per-stage, per-clause tolerances (delta^l, delta^u) defining the relaxed
 * regime. An all-zero spec is the strict regime.
 */
class WindowSpec {
 public:
  WindowSpec() = default;
  explicit WindowSpec(std::vector<std::vector<Tolerance>> tolerances);

  /// All-zero window shaped like `regime`.
  static WindowSpec strict(const Regime& regime);

  [[nodiscard]] const std::vector<Tolerance>& stage(std::size_t t) const { return tolerances_.at(t); }
  [[nodiscard]] std::size_t stage_count() const { return tolerances_.size(); }
  [[nodiscard]] bool is_strict() const;
  [[nodiscard]] double max_abs() const;

  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;

 private:
  std::vector<std::vector<Tolerance>> tolerances_;
};

/// Observed ranges for every clause of `regime`, stage-major.
std::vector<std::vector<ClauseBounds>> clause_bounds(const Regime& regime, const Panel& panel);

/// True if the window satisfies the directional constraints
///   delta^l <= min(delta_max, psi - x_lo),  delta^u <= min(delta_max, x_hi - psi).
/// `delta_max` is per stage and clause; an empty vector skips that cap.
bool window_admissible(const Regime& regime, const WindowSpec& window,
                       const std::vector<std::vector<ClauseBounds>>& bounds,
                       const std::vector<std::vector<double>>& delta_max = {});

/// Builds a window and throws kInvalidArgument if it is not admissible.
WindowSpec make_window(const Regime& regime, std::vector<std::vector<Tolerance>> tolerances,
                       const std::vector<std::vector<ClauseBounds>>& bounds,
                       const std::vector<std::vector<double>>& delta_max = {});

/**
 * Windowed compatibility of an observed action with a stage rule.
 *
 * For an LE clause the treat region X <= psi widens to X <= psi + delta^u and
 * the control region X > psi widens to X > psi - delta^l; GE clauses mirror
 * this (treat: X >= psi - delta^l, control: X < psi + delta^u). Inside the band
 * both actions are compatible. With several clauses, treat is compatible iff
 * every widened treat condition holds, control iff some widened control
 * condition holds; a zero window reproduces strict adherence exactly.
 */
bool windowed_compatible(std::span<const Clause> clauses, std::span<const Tolerance> tolerances,
                         std::span<const double> row, int action, int treat_action, int control_action);

bool windowed_compatibility(const Regime& regime, const WindowSpec& window, const Panel& panel, std::size_t i,
                            std::size_t t);

}  // namespace dtr

#endif  // DTR_REGIME_HPP
