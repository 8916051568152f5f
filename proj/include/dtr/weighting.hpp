#ifndef DTR_WEIGHTING_HPP
#define DTR_WEIGHTING_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dtr/glm.hpp"
#include "dtr/panel.hpp"
#include "dtr/regime.hpp"

namespace dtr {

enum class WeightKind { kIpw, kGaw, kBaw };

std::string_view to_string(WeightKind kind) noexcept;

/// Bias-control schedule epsilon_n = c * n^-k, split evenly over stages.
struct GawConfig {
  double c = 0.0;
  double k = 0.5;

  /// Throws unless c >= 0, k > 0 and epsilon_n < 1 for this sample size.
  void validate(std::size_t n) const;
  [[nodiscard]] double epsilon(std::size_t n) const;
  [[nodiscard]] double stage_epsilon(std::size_t n, std::size_t stages) const {
    return epsilon(n) / static_cast<double>(stages);
  }
};

/// Upper bound on the relaxation gamma; keeps gamma inside [0, 1).
inline constexpr double kGammaCap = 1.0 - 1e-9;

/**
 * gamma_t = eps_t p_t / ((1 - eps_t)(1 - p_t)), capped at `cap`.
 *
 * Uncapped, this makes p_t / D_t = 1 - eps_t exactly, with
 * D_t = p_t + gamma_t (1 - p_t). `*capped` is set when the cap binds.
 */
double gamma_from_constraint(double eps_t, double p_t, double cap = kGammaCap, bool* capped = nullptr);

/// m_t / D_t with m_t = 1 for adherent, gamma_t otherwise.
double gaw_stage_weight(bool adherent, double p_t, double gamma_t);

/// Per-individual, per-stage GAW intermediates (all n x T), plus theta_i.
struct GawStageQuantities {
  Eigen::MatrixXd adherence_prob;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd compatibility;
  Eigen::MatrixXd denominator;
  Eigen::VectorXd theta;  // prod_t p_t / D_t
  std::size_t gamma_cap_events = 0;
};

struct WeightSeries {
  WeightKind kind = WeightKind::kIpw;
  Eigen::MatrixXd stage;       // w_{t,i}, n x T
  Eigen::MatrixXd cumulative;  // prod_{s<=t} w_{s,i}, n x T
  std::optional<GawConfig> gaw_config;
  std::optional<WindowSpec> window;
  std::optional<GawStageQuantities> gaw;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(stage.rows()); }
  [[nodiscard]] std::size_t stage_count() const { return static_cast<std::size_t>(stage.cols()); }
  [[nodiscard]] Eigen::VectorXd terminal() const { return cumulative.col(cumulative.cols() - 1); }
};

/// Fills `cumulative` from `stage` by running products over stages.
void accumulate_weights(WeightSeries& series);

WeightSeries ipw_weights(const Panel& panel, const Regime& regime, const PropensityTable& propensities);

WeightSeries gaw_weights(const Panel& panel, const Regime& regime, const PropensityTable& propensities,
                         const GawConfig& config);

/// Caller-supplied relaxation gamma(i, t, p_t); must return values in [0, 1).
using GammaSupplier = std::function<double(std::size_t i, std::size_t t, double p_t)>;

WeightSeries gaw_weights(const Panel& panel, const Regime& regime, const PropensityTable& propensities,
                         const GammaSupplier& gamma);

WeightSeries baw_weights(const Panel& panel, const Regime& regime, const WindowSpec& window,
                         const PropensityTable& propensities);

/// (sum w)^2 / sum w^2. Throws kNoAdherers when the weights sum to zero.
double ess(std::span<const double> weights);
double ess(const Eigen::Ref<const Eigen::VectorXd>& weights);

/// Percentile with linear interpolation between closest ranks: position
/// (N - 1) * pct / 100 in the sorted sample (the common "linear" definition).
double percentile(std::vector<double> values, double pct);

/// percentile(hi) - percentile(lo).
double weight_spread(std::span<const double> weights, double lo_pct, double hi_pct);

/// (weighted mean of group 1 - weighted mean of group 0) divided by the pooled
/// unweighted standard deviation sqrt((s1^2 + s0^2) / 2). Empty `weights`
/// means unweighted.
double smd(std::span<const double> covariate, std::span<const int> groups, std::span<const double> weights = {});

}  // namespace dtr

#endif  // DTR_WEIGHTING_HPP
