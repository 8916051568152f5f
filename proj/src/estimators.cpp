#include "dtr/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "dtr/error.hpp"

namespace dtr {

std::string EstimatorSpec::name() const {
  std::string out = normalized ? "n" : "";
  if (augmented) {
    out += "a";
  }
  out += to_string(weighting);
  return out;
}

EstimatorSpec EstimatorSpec::parse(std::string_view name) {
  const std::string original(name);
  EstimatorSpec spec;
  spec.normalized = false;
  if (name.starts_with("n")) {
    spec.normalized = true;
    name.remove_prefix(1);
  }
  if (name.starts_with("a")) {
    spec.augmented = true;
    name.remove_prefix(1);
  }
  if (name == "ipw") {
    spec.weighting = WeightKind::kIpw;
  } else if (name == "gaw") {
    spec.weighting = WeightKind::kGaw;
  } else if (name == "baw") {
    spec.weighting = WeightKind::kBaw;
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown estimator '" + original + "'");
  }
  return spec;
}

std::vector<EstimatorSpec> EstimatorSpec::all() {
  std::vector<EstimatorSpec> out;
  for (const bool augmented : {false, true}) {
    for (const auto kind : {WeightKind::kIpw, WeightKind::kGaw, WeightKind::kBaw}) {
      for (const bool normalized : {true, false}) {
        out.push_back({kind, augmented, normalized});
      }
    }
  }
  return out;
}

double plain_value(std::span<const double> terminal_weights, std::span<const double> outcome, bool normalized) {
  require(terminal_weights.size() == outcome.size(), "weights and outcome lengths differ");
  require(!outcome.empty(), "value of an empty sample");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < outcome.size(); ++i) {
    num += terminal_weights[i] * outcome[i];
    den += terminal_weights[i];
  }
  if (!normalized) {
    return num / static_cast<double>(outcome.size());
  }
  if (!(den > 0.0)) {
    fail(ErrorCode::kNoAdherers, "no individual carries positive weight under this regime");
  }
  return num / den;
}

double augmented_value(const Eigen::MatrixXd& cumulative, std::span<const Eigen::VectorXd> q_values, bool normalized) {
  const auto n = cumulative.rows();
  const auto stages = cumulative.cols();
  require(static_cast<Eigen::Index>(q_values.size()) == stages + 1, "augmented value needs T+1 Q vectors");
  require(n > 0, "value of an empty sample");
  for (const auto& q : q_values) {
    require(q.size() == n, "Q vector length differs from weight rows");
  }
  if (!normalized) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double term = q_values[0](i);
      for (Eigen::Index t = 0; t < stages; ++t) {
        const auto ut = static_cast<std::size_t>(t);
        term += cumulative(i, t) * (q_values[ut + 1](i) - q_values[ut](i));
      }
      total += term;
    }
    return total / static_cast<double>(n);
  }
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    value += q_values[0](i);
  }
  value /= static_cast<double>(n);
  for (Eigen::Index t = 0; t < stages; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num += cumulative(i, t) * (q_values[ut + 1](i) - q_values[ut](i));
      den += cumulative(i, t);
    }
    if (!(den > 0.0)) {
      fail(ErrorCode::kNoAdherers, "no individual carries positive weight at stage " + std::to_string(t + 1));
    }
    value += num / den;
  }
  return value;
}

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

EstimateDiagnostics diagnostics_of(const WeightSeries& weights) {
  EstimateDiagnostics diag;
  if (weights.gaw) {
    diag.gamma_cap_events = weights.gaw->gamma_cap_events;
  }
  diag.window = weights.window;
  diag.variance_heuristic = weights.kind == WeightKind::kBaw;
  return diag;
}

std::optional<double> terminal_ess(const Eigen::VectorXd& terminal) {
  if (!(terminal.sum() > 0.0)) {
    return std::nullopt;
  }
  return ess(terminal);
}

}  // namespace

ValueEstimate value_ipw(const Panel& panel, const WeightSeries& weights, bool normalized) {
  require(weights.size() == panel.size(), "weight rows differ from panel size");
  const Eigen::VectorXd terminal = weights.terminal();
  ValueEstimate out;
  out.estimator = {weights.kind, false, normalized};
  out.value = plain_value(as_span(terminal), as_span(panel.outcome()), normalized);
  out.ess = terminal_ess(terminal);
  out.diagnostics = diagnostics_of(weights);
  if (normalized) {
    out.variance = analytical_variance_plain(panel, weights, out.value);
  }
  return out;
}

ValueEstimate value_augmented(const Panel& panel, const WeightSeries& weights,
                              std::span<const Eigen::VectorXd> q_values, bool normalized) {
  require(weights.size() == panel.size(), "weight rows differ from panel size");
  ValueEstimate out;
  out.estimator = {weights.kind, true, normalized};
  out.value = augmented_value(weights.cumulative, q_values, normalized);
  out.ess = terminal_ess(weights.terminal());
  out.diagnostics = diagnostics_of(weights);
  if (normalized) {
    out.variance = analytical_variance_augmented(weights, q_values, out.value);
  }
  return out;
}

double analytical_variance_plain(const Panel& panel, const WeightSeries& weights, double point) {
  const Eigen::VectorXd w = weights.terminal();
  const auto& y = panel.outcome();
  const auto n = static_cast<double>(y.size());
  double total = 0.0;
  double score = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    total += w(i);
    const double r = w(i) * (y(i) - point);
    score += r * r;
  }
  if (!(total > 0.0)) {
    fail(ErrorCode::kNoAdherers, "analytical variance undefined: weights sum to zero");
  }
  const double j = total / n;
  return score / (n * n) / (j * j);
}

double analytical_variance_augmented(const WeightSeries& weights, std::span<const Eigen::VectorXd> q_values,
                                     double point) {
  const auto& w = weights.cumulative;
  const auto n = w.rows();
  const auto stages = w.cols();
  require(static_cast<Eigen::Index>(q_values.size()) == stages + 1, "augmented variance needs T+1 Q vectors");
  Eigen::VectorXd sums(stages);
  for (Eigen::Index t = 0; t < stages; ++t) {
    sums(t) = w.col(t).sum();
    if (!(sums(t) > 0.0)) {
      fail(ErrorCode::kNoAdherers, "analytical variance undefined: stage " + std::to_string(t + 1) +
                                       " weights sum to zero");
    }
  }
  const auto nd = static_cast<double>(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double u = (q_values[0](i) - point) / nd;
    for (Eigen::Index t = 0; t < stages; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      u += w(i, t) * (q_values[ut + 1](i) - q_values[ut](i)) / sums(t);
    }
    total += u * u;
  }
  return total;
}

double bias_bound(std::span<const double> theta, double y_range) {
  require(!theta.empty(), "bias_bound needs at least one theta");
  require(y_range >= 0.0, "bias_bound: outcome range must be non-negative");
  const double worst = *std::min_element(theta.begin(), theta.end());
  return (1.0 - worst) * y_range;
}

}  // namespace dtr
