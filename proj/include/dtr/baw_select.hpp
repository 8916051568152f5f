#ifndef DTR_BAW_SELECT_HPP
#define DTR_BAW_SELECT_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dtr/glm.hpp"
#include "dtr/panel.hpp"
#include "dtr/regime.hpp"

namespace dtr {

/// (hi - lo) / q. Throws on a degenerate range or q <= 0.
double delta_max(double lo, double hi, double q);

/// {0, step, 2 step, ...} up to and including delta_max (within 1e-9).
std::vector<double> window_axis_values(double step, double delta_max);

enum class WindowSide { kBoth, kLower, kUpper };

/// Candidate tolerances for one clause. kBoth sets delta^l = delta^u.
struct WindowAxis {
  std::size_t stage = 0;
  std::size_t clause = 0;
  WindowSide side = WindowSide::kBoth;
  std::vector<double> values;
};

/**
 * Cartesian product of the axes, enumerated in lexicographic order (first
 * axis slowest, values ascending). Every axis must contain 0 so the strict
 * window is always a candidate.
 */
class WindowGrid {
 public:
  explicit WindowGrid(std::vector<WindowAxis> axes);

  [[nodiscard]] const std::vector<WindowAxis>& axes() const { return axes_; }
  [[nodiscard]] std::size_t size() const { return tuples_.size(); }
  [[nodiscard]] const std::vector<double>& tuple(std::size_t g) const { return tuples_.at(g); }
  /// Window for candidate g; clauses without an axis get zero tolerance.
  [[nodiscard]] WindowSpec window(const Regime& regime, std::size_t g) const;

 private:
  std::vector<WindowAxis> axes_;
  std::vector<std::vector<double>> tuples_;
};

/// One symmetric axis per clause, each {0, step, ...} up to its delta_max.
WindowGrid build_grid(const Regime& regime, const std::vector<std::vector<double>>& steps,
                      const std::vector<std::vector<double>>& delta_max);

struct BawConfig {
  std::vector<WindowAxis> axes;
  std::size_t bootstrap_count = 100;
  double lambda_bias = 1.0;
  bool refit = false;               // refit nuisance models inside each replicate
  bool augmented = false;           // bootstrap statistic is the normalized augmented estimate
  double max_excluded_fraction = 0.2;
  std::optional<double> q;          // when set, tolerances are also capped at range / q

  void validate() const;
};

/// B resamples of row indices drawn with replacement; resample b uses the
/// substream derive_seed(seed, {b}), so it does not depend on B or on threads.
struct BootstrapPlan {
  std::vector<std::vector<std::size_t>> rows;

  static BootstrapPlan draw(std::size_t n, std::size_t replicates, std::uint64_t seed);
  [[nodiscard]] std::size_t size() const { return rows.size(); }
};

struct WindowCandidate {
  std::vector<double> delta;  // grid tuple
  WindowSpec window;
  bool admissible = true;     // satisfies the directional constraints
  std::size_t used = 0;       // replicates with a defined estimate
  std::size_t excluded = 0;   // replicates without adherers
  bool disqualified = false;
  double mean = 0.0;
  double variance = 0.0;      // divisor used - 1
  double bias = 0.0;          // mean - reference
  double loss = 0.0;
  std::string note;
};

struct WindowSearchResult {
  std::vector<WindowCandidate> candidates;
  std::size_t optimum = 0;
  double reference = 0.0;     // normalized (augmented) IPW estimate on the original sample
  std::size_t bootstrap_count = 0;
  double lambda_bias = 0.0;
  bool augmented = false;

  [[nodiscard]] const WindowCandidate& best() const { return candidates.at(optimum); }
};

/// Nuisance models used by the window search and by the final estimate.
struct NuisanceSpecs {
  std::vector<FeatureSpec> propensity;
  std::vector<FeatureSpec> outcome;
  double clamp = kDefaultPropensityClamp;
  IrlsOptions irls;

  /// Fills empty spec lists with the defaults for this panel.
  [[nodiscard]] NuisanceSpecs resolved(const Panel& panel) const;
};

/**
 * Bootstrap search for the adherence window minimizing
 *   Var_B(delta) + lambda * (mean_B(delta) - V_ref)^2.
 *
 * `propensities` and `q_cache` are the fits on the full panel; they are
 * reused for every replicate unless config.refit is set, in which case both
 * are refit on each resample. `q_cache` is required when config.augmented.
 * Ties go to the earliest candidate in lexicographic order. Throws
 * kDisqualifiedWindow if no candidate survives.
 */
WindowSearchResult select_window(const Panel& panel, const Regime& regime, const BawConfig& config,
                                 const BootstrapPlan& plan, const NuisanceSpecs& specs,
                                 const PropensityTable& propensities, const QFunctionCache* q_cache = nullptr);

/// Convenience overload: fits the nuisance models and draws the plan from `seed`.
WindowSearchResult select_window(const Panel& panel, const Regime& regime, const BawConfig& config,
                                 std::uint64_t seed, const NuisanceSpecs& specs = {});

/// Per-candidate diagnostics table.
void write_window_csv(std::ostream& out, const WindowSearchResult& result);

}  // namespace dtr

#endif  // DTR_BAW_SELECT_HPP
