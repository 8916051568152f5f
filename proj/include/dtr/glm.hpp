#ifndef DTR_GLM_HPP
#define DTR_GLM_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtr/panel.hpp"
#include "dtr/regime.hpp"

namespace dtr {

enum class FactorKind { kCovariate, kTreatment };

/// A covariate (stage, column) raised to `power`, or a stage treatment.
struct Factor {
  FactorKind kind = FactorKind::kCovariate;
  std::size_t stage = 0;
  std::size_t column = 0;
  int power = 1;

  friend bool operator==(const Factor&, const Factor&) = default;
};

/// Product of factors; the empty product is the intercept.
struct Term {
  std::vector<Factor> factors;

  static Term intercept() { return {}; }
  static Term covariate(std::size_t stage, std::size_t column, int power = 1) {
    return {{{FactorKind::kCovariate, stage, column, power}}};
  }
  static Term treatment(std::size_t stage) { return {{{FactorKind::kTreatment, stage, 0, 1}}}; }
  /// Treatment at `stage` times covariate (cov_stage, column)^power.
  static Term treatment_times(std::size_t stage, std::size_t cov_stage, std::size_t column, int power = 1) {
    return {{{FactorKind::kTreatment, stage, 0, 1}, {FactorKind::kCovariate, cov_stage, column, power}}};
  }

  [[nodiscard]] std::string label(const Panel* panel = nullptr) const;
};

/// Ordered list of model terms over (covariate history, treatment history).
class FeatureSpec {
 public:
  FeatureSpec() = default;
  explicit FeatureSpec(std::vector<Term> terms);

  [[nodiscard]] const std::vector<Term>& terms() const { return terms_; }
  [[nodiscard]] std::size_t width() const { return terms_.size(); }

 private:
  std::vector<Term> terms_;
};

/// Intercept, every stage-t covariate and all earlier treatments.
FeatureSpec default_propensity_spec(const Panel& panel, std::size_t t);

/// Intercept, covariate history through t, earlier treatments, A_t, and each
/// treatment A_s (s <= t) interacted with its own stage's covariates.
FeatureSpec default_outcome_spec(const Panel& panel, std::size_t t);

/// Treatment override used when evaluating a model under a regime: the
/// stage-`stage` treatment factor takes `action` for every row.
struct ActionOverride {
  std::size_t stage = 0;
  int action = kTreat;
};

/// Design matrix with one column per term. Throws if a term references a
/// stage or column the panel lacks.
Eigen::MatrixXd build_design(const Panel& panel, const FeatureSpec& spec,
                             std::optional<ActionOverride> override_action = std::nullopt);

struct IrlsOptions {
  int max_iter = 100;
  double tol = 1e-8;
  double ridge_fallback = 1e-6;
};

struct LogisticFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // inverse Fisher information at the final iterate
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  bool separation = false;     // degenerate response or diverging linear predictor
  bool ridge_applied = false;  // separation fallback was used

  [[nodiscard]] Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseSqrt(); }
};

/**
 * Bernoulli maximum likelihood by iteratively reweighted least squares with
 * step halving, so the deviance never increases across accepted iterations.
 * Convergence: max |step| < tol or relative deviance change < tol.
 *
 * A constant response or a linear predictor beyond |30| flags separation; the
 * fit is then redone with a ridge penalty on every non-constant column and
 * returned with `ridge_applied` set. Non-convergence after max_iter returns
 * the last iterate with converged = false.
 */
LogisticFit fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const IrlsOptions& options = {});

inline constexpr double kDefaultPropensityClamp = 1e-6;

double expit(double eta);

/// expit(row . coefficients) clamped to [clamp, 1 - clamp]. Increments
/// `*clamp_events` when the clamp binds.
double predict_propensity(const LogisticFit& model, const Eigen::Ref<const Eigen::RowVectorXd>& row,
                          double clamp = kDefaultPropensityClamp, std::size_t* clamp_events = nullptr);

struct PropensityModel {
  FeatureSpec spec;
  LogisticFit fit;
};

/// Fitted P(A_t = 1 | history) for every individual and stage.
struct PropensityTable {
  Eigen::MatrixXd treat_prob;  // n x T
  std::size_t clamp_events = 0;

  /// Probability of the action actually observed.
  [[nodiscard]] double observed(const Panel& panel, std::size_t i, std::size_t t) const {
    const double p = treat_prob(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
    return panel.treatment(t, i) == kTreat ? p : 1.0 - p;
  }
  /// Probability of `action`.
  [[nodiscard]] double of(int action, std::size_t i, std::size_t t) const {
    const double p = treat_prob(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
    return action == kTreat ? p : 1.0 - p;
  }
};

struct PropensityFit {
  std::vector<PropensityModel> models;
  PropensityTable table;
};

PropensityFit fit_propensities(const Panel& panel, const std::vector<FeatureSpec>& specs,
                               double clamp = kDefaultPropensityClamp, const IrlsOptions& options = {});

/// Evaluates fitted models on (possibly different) panel rows.
PropensityTable predict_propensities(const Panel& panel, const std::vector<PropensityModel>& models,
                                     double clamp = kDefaultPropensityClamp);

/// Ordinary least squares via column-pivoted QR. Collinear columns get a zero
/// coefficient and are counted in `dropped`.
struct OlsFit {
  Eigen::VectorXd coefficients;
  Eigen::Index rank = 0;
  Eigen::Index dropped = 0;
};

OlsFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response);

/// Stagewise regression coefficients and the pseudo-outcomes Q_1^d .. Q_T^d
/// followed by Q_{T+1}^d = Y (T+1 vectors in total).
struct QFunctionFit {
  std::vector<Eigen::VectorXd> coefficients;
  std::vector<Eigen::VectorXd> values;
  Eigen::Index dropped_columns = 0;
};

/**
 * Cached pieces of the backward Q recursion that do not depend on the
 * regime: the observed-history design matrices, their pivoted QR
 * factorisations, and the same designs with A_t forced to treat or control.
 * evaluate() reruns only the regime-dependent part, so a regime grid pays
 * for one factorisation per stage.
 */
class QFunctionCache {
 public:
  QFunctionCache(const Panel& panel, std::vector<FeatureSpec> specs);

  [[nodiscard]] QFunctionFit evaluate(const Panel& panel, const Regime& regime) const;
  [[nodiscard]] const std::vector<FeatureSpec>& specs() const { return specs_; }

 private:
  struct StageCache {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    Eigen::MatrixXd treat_design;
    Eigen::MatrixXd control_design;
  };
  std::vector<FeatureSpec> specs_;
  std::vector<StageCache> stages_;
};

/// Backward recursion from Q_{T+1}^d = Y: regress the next pseudo-outcome on
/// the observed stage-t history and A_t, then plug in d_t.
QFunctionFit fit_q_functions(const Panel& panel, const Regime& regime, const std::vector<FeatureSpec>& specs);

}  // namespace dtr

#endif  // DTR_GLM_HPP
