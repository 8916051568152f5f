#ifndef DTR_ESTIMATORS_HPP
#define DTR_ESTIMATORS_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dtr/panel.hpp"
#include "dtr/regime.hpp"
#include "dtr/weighting.hpp"

namespace dtr {

/// One of the twelve value estimators: {IPW, GAW, BAW} x {plain, augmented}
/// x {unnormalized, normalized}.
struct EstimatorSpec {
  WeightKind weighting = WeightKind::kIpw;
  bool augmented = false;
  bool normalized = true;

  /// Lower-case name, e.g. "nipw", "agaw", "nabaw".
  [[nodiscard]] std::string name() const;
  static EstimatorSpec parse(std::string_view name);
  static std::vector<EstimatorSpec> all();

  friend bool operator==(const EstimatorSpec&, const EstimatorSpec&) = default;
};

struct EstimateDiagnostics {
  std::size_t clamp_events = 0;
  std::size_t gamma_cap_events = 0;
  bool variance_heuristic = false;  // BAW: window selection is outside the sandwich
  std::optional<WindowSpec> window;
};

struct ValueEstimate {
  EstimatorSpec estimator;
  double value = 0.0;
  std::optional<double> variance;
  std::optional<double> ess;  // of the terminal weights; empty if they are all zero
  EstimateDiagnostics diagnostics;
};

/// n^-1 sum w y, or sum w y / sum w when normalized (kNoAdherers if the
/// weights sum to zero). Summation runs in index order.
double plain_value(std::span<const double> terminal_weights, std::span<const double> outcome, bool normalized);

/// Augmented value from cumulative weights (n x T) and Q_1..Q_{T+1}:
///   unnormalized  n^-1 sum_i { Q_1 + sum_t wbar_t (Q_{t+1} - Q_t) }
///   normalized    mean(Q_1) + sum_t sum_i wbar_t (Q_{t+1} - Q_t) / sum_i wbar_t
/// The normalized form throws kNoAdherers naming the first stage whose
/// weights sum to zero.
double augmented_value(const Eigen::MatrixXd& cumulative, std::span<const Eigen::VectorXd> q_values, bool normalized);

/// Plain estimator from any weight kind (IPW, GAW or BAW weights).
ValueEstimate value_ipw(const Panel& panel, const WeightSeries& weights, bool normalized);

/// AIPW / AGAW / ABAW depending on the weight kind.
ValueEstimate value_augmented(const Panel& panel, const WeightSeries& weights,
                              std::span<const Eigen::VectorXd> q_values, bool normalized);

/**
 * Sandwich variance of the normalized plain estimator,
 *   (1/n^2) sum_i wbar_i^2 (Y_i - V)^2 / Jbar^2,   Jbar = n^-1 sum_i wbar_i.
 */
double analytical_variance_plain(const Panel& panel, const WeightSeries& weights, double point);

/**
 * Estimating-function variance of the normalized augmented estimator with
 *   U_i = sum_t wbar_{t,i} (Q_{t+1,i} - Q_{t,i}) / S_t + (Q_{1,i} - V) / n,
 * S_t = sum_i wbar_{t,i}; returns sum_i U_i^2 (= n * mean U^2).
 */
double analytical_variance_augmented(const WeightSeries& weights, std::span<const Eigen::VectorXd> q_values,
                                     double point);

/// Conservative |bias| bound for GAW: (1 - min_i theta_i) * y_range.
double bias_bound(std::span<const double> theta, double y_range);

}  // namespace dtr

#endif  // DTR_ESTIMATORS_HPP
