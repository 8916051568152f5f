#include "dtr/glm.hpp"

#include <algorithm>
#include <cmath>

#include "dtr/error.hpp"

namespace dtr {

namespace {

std::vector<Factor> canonical(const Term& term) {
  auto f = term.factors;
  std::sort(f.begin(), f.end(), [](const Factor& a, const Factor& b) {
    return std::tie(a.kind, a.stage, a.column, a.power) < std::tie(b.kind, b.stage, b.column, b.power);
  });
  return f;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double bernoulli_deviance(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    dev += y(i) > 0.5 ? softplus(-eta(i)) : softplus(eta(i));
  }
  return 2.0 * dev;
}

bool is_constant_one(const Eigen::MatrixXd& x, Eigen::Index j) {
  return x.rows() > 0 && (x.col(j).array() == 1.0).all();
}

LogisticFit irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& penalty,
                 const IrlsOptions& options) {
  const Eigen::Index p = x.cols();
  LogisticFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = x * beta;
  auto objective = [&](const Eigen::VectorXd& b, const Eigen::VectorXd& e) {
    return bernoulli_deviance(e, y) + (penalty.array() * b.array().square()).sum();
  };
  double current = objective(beta, eta);
  Eigen::MatrixXd hessian(p, p);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    fit.iterations = iter;
    Eigen::VectorXd mu(eta.size());
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu(i) = expit(eta(i));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-300);
    }
    hessian.noalias() = x.transpose() * w.asDiagonal() * x;
    hessian.diagonal() += penalty;
    const Eigen::VectorXd score = x.transpose() * (y - mu) - (penalty.array() * beta.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    Eigen::VectorXd step = ldlt.info() == Eigen::Success && ldlt.isPositive()
                               ? Eigen::VectorXd(ldlt.solve(score))
                               : Eigen::VectorXd(hessian.colPivHouseholderQr().solve(score));
    if (!step.allFinite()) {
      break;
    }
    // Step halving keeps the penalized deviance monotone.
    Eigen::VectorXd candidate = beta + step;
    Eigen::VectorXd candidate_eta = x * candidate;
    double next = objective(candidate, candidate_eta);
    int halvings = 0;
    while (!(next <= current) && halvings < 40) {
      step *= 0.5;
      candidate = beta + step;
      candidate_eta = x * candidate;
      next = objective(candidate, candidate_eta);
      ++halvings;
    }
    if (!(next <= current)) {
      fit.converged = true;  // no descent direction left at machine precision
      break;
    }
    const double change = std::abs(current - next) / (std::abs(next) + 0.1);
    beta = std::move(candidate);
    eta = std::move(candidate_eta);
    current = next;
    if (step.cwiseAbs().maxCoeff() < options.tol || change < options.tol) {
      fit.converged = true;
      break;
    }
  }
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double m = expit(eta(i));
    w(i) = std::max(m * (1.0 - m), 1e-300);
  }
  hessian.noalias() = x.transpose() * w.asDiagonal() * x;
  hessian.diagonal() += penalty;
  fit.covariance = hessian.completeOrthogonalDecomposition().pseudoInverse();
  fit.coefficients = std::move(beta);
  fit.deviance = bernoulli_deviance(eta, y);
  fit.separation = p > 0 && eta.size() > 0 && eta.cwiseAbs().maxCoeff() > 30.0;
  return fit;
}

}  // namespace

std::string Term::label(const Panel* panel) const {
  if (factors.empty()) {
    return "1";
  }
  std::string out;
  for (const auto& f : factors) {
    if (!out.empty()) {
      out += "*";
    }
    if (f.kind == FactorKind::kTreatment) {
      out += "A" + std::to_string(f.stage + 1);
      continue;
    }
    if (panel != nullptr && f.stage < panel->stage_count() &&
        f.column < panel->stage(f.stage).covariate_names.size()) {
      out += panel->stage(f.stage).covariate_names[f.column];
    } else {
      out += "X" + std::to_string(f.stage + 1) + "_" + std::to_string(f.column + 1);
    }
    if (f.power != 1) {
      out += "^" + std::to_string(f.power);
    }
  }
  return out;
}

FeatureSpec::FeatureSpec(std::vector<Term> terms) : terms_(std::move(terms)) {
  for (std::size_t a = 0; a < terms_.size(); ++a) {
    for (const auto& f : terms_[a].factors) {
      require(f.power >= 1, "feature powers must be positive");
    }
    for (std::size_t b = 0; b < a; ++b) {
      require(canonical(terms_[a]) != canonical(terms_[b]), "duplicate feature term " + terms_[a].label());
    }
  }
}

FeatureSpec default_propensity_spec(const Panel& panel, std::size_t t) {
  std::vector<Term> terms{Term::intercept()};
  const auto p = static_cast<std::size_t>(panel.stage(t).covariates.cols());
  for (std::size_t j = 0; j < p; ++j) {
    terms.push_back(Term::covariate(t, j));
  }
  for (std::size_t s = 0; s < t; ++s) {
    terms.push_back(Term::treatment(s));
  }
  return FeatureSpec(std::move(terms));
}

FeatureSpec default_outcome_spec(const Panel& panel, std::size_t t) {
  std::vector<Term> terms{Term::intercept()};
  for (std::size_t s = 0; s <= t; ++s) {
    const auto p = static_cast<std::size_t>(panel.stage(s).covariates.cols());
    for (std::size_t j = 0; j < p; ++j) {
      terms.push_back(Term::covariate(s, j));
    }
  }
  for (std::size_t s = 0; s <= t; ++s) {
    terms.push_back(Term::treatment(s));
  }
  for (std::size_t s = 0; s <= t; ++s) {
    const auto p = static_cast<std::size_t>(panel.stage(s).covariates.cols());
    for (std::size_t j = 0; j < p; ++j) {
      terms.push_back(Term::treatment_times(s, s, j));
    }
  }
  return FeatureSpec(std::move(terms));
}

Eigen::MatrixXd build_design(const Panel& panel, const FeatureSpec& spec, std::optional<ActionOverride> override_action) {
  const auto n = static_cast<Eigen::Index>(panel.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(n, static_cast<Eigen::Index>(spec.width()));
  for (std::size_t k = 0; k < spec.width(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    for (const auto& f : spec.terms()[k].factors) {
      require(f.stage < panel.stage_count(), "feature term references missing stage " + std::to_string(f.stage + 1));
      if (f.kind == FactorKind::kTreatment) {
        if (override_action && override_action->stage == f.stage) {
          x.col(col) *= static_cast<double>(override_action->action);
          continue;
        }
        const auto& a = panel.stage(f.stage).treatment;
        for (Eigen::Index i = 0; i < n; ++i) {
          x(i, col) *= static_cast<double>(a[static_cast<std::size_t>(i)]);
        }
        continue;
      }
      const auto& cov = panel.stage(f.stage).covariates;
      require(f.column < static_cast<std::size_t>(cov.cols()),
              "feature term references missing covariate column " + std::to_string(f.column + 1));
      const auto src = cov.col(static_cast<Eigen::Index>(f.column));
      if (f.power == 1) {
        x.col(col).array() *= src.array();
      } else {
        x.col(col).array() *= src.array().pow(static_cast<double>(f.power));
      }
    }
  }
  return x;
}

double expit(double eta) {
  if (eta >= 0.0) {
    return 1.0 / (1.0 + std::exp(-eta));
  }
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

LogisticFit fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const IrlsOptions& options) {
  require(design.rows() == response.size(), "fit_logistic: design and response lengths differ");
  require(design.allFinite(), "fit_logistic: design contains non-finite values");
  for (Eigen::Index i = 0; i < response.size(); ++i) {
    require(response(i) == 0.0 || response(i) == 1.0, "fit_logistic: response must be 0/1");
  }
  const Eigen::Index p = design.cols();
  LogisticFit fit = irls(design, response, Eigen::VectorXd::Zero(p), options);
  const bool degenerate = response.size() == 0 || (response.array() == response(0)).all();
  if (degenerate || fit.separation) {
    Eigen::VectorXd penalty(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      penalty(j) = is_constant_one(design, j) ? 0.0 : options.ridge_fallback;
    }
    fit = irls(design, response, penalty, options);
    fit.separation = true;
    fit.ridge_applied = true;
  }
  return fit;
}

double predict_propensity(const LogisticFit& model, const Eigen::Ref<const Eigen::RowVectorXd>& row, double clamp,
                          std::size_t* clamp_events) {
  require(row.size() == model.coefficients.size(), "predict_propensity: row width differs from model");
  const double p = expit(row.dot(model.coefficients));
  if (p < clamp || p > 1.0 - clamp) {
    if (clamp_events != nullptr) {
      ++*clamp_events;
    }
    return std::clamp(p, clamp, 1.0 - clamp);
  }
  return p;
}

PropensityTable predict_propensities(const Panel& panel, const std::vector<PropensityModel>& models, double clamp) {
  require(models.size() == panel.stage_count(), "one propensity model per stage required");
  PropensityTable table;
  table.treat_prob.resize(static_cast<Eigen::Index>(panel.size()), static_cast<Eigen::Index>(models.size()));
  for (std::size_t t = 0; t < models.size(); ++t) {
    const Eigen::MatrixXd x = build_design(panel, models[t].spec);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      table.treat_prob(i, static_cast<Eigen::Index>(t)) =
          predict_propensity(models[t].fit, x.row(i), clamp, &table.clamp_events);
    }
  }
  return table;
}

PropensityFit fit_propensities(const Panel& panel, const std::vector<FeatureSpec>& specs, double clamp,
                               const IrlsOptions& options) {
  require(specs.size() == panel.stage_count(), "one propensity feature spec per stage required");
  PropensityFit out;
  for (std::size_t t = 0; t < specs.size(); ++t) {
    const Eigen::MatrixXd x = build_design(panel, specs[t]);
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y(i) = static_cast<double>(panel.treatment(t, static_cast<std::size_t>(i)));
    }
    out.models.push_back({specs[t], fit_logistic(x, y, options)});
  }
  out.table = predict_propensities(panel, out.models, clamp);
  return out;
}

OlsFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
  require(design.rows() == response.size(), "fit_ols: design and response lengths differ");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  OlsFit fit;
  fit.coefficients = qr.solve(response);
  fit.rank = qr.rank();
  fit.dropped = design.cols() - fit.rank;
  return fit;
}

QFunctionCache::QFunctionCache(const Panel& panel, std::vector<FeatureSpec> specs) : specs_(std::move(specs)) {
  require(specs_.size() == panel.stage_count(), "one outcome feature spec per stage required");
  stages_.reserve(specs_.size());
  for (std::size_t t = 0; t < specs_.size(); ++t) {
    StageCache cache;
    cache.qr.compute(build_design(panel, specs_[t]));
    cache.treat_design = build_design(panel, specs_[t], ActionOverride{t, kTreat});
    cache.control_design = build_design(panel, specs_[t], ActionOverride{t, kControl});
    stages_.push_back(std::move(cache));
  }
}

QFunctionFit QFunctionCache::evaluate(const Panel& panel, const Regime& regime) const {
  const std::size_t stages = panel.stage_count();
  require(regime.stage_count() == stages, "regime and panel stage counts differ");
  QFunctionFit fit;
  fit.coefficients.resize(stages);
  fit.values.resize(stages + 1);
  fit.values[stages] = panel.outcome();
  for (std::size_t s = stages; s-- > 0;) {
    const auto& cache = stages_[s];
    Eigen::VectorXd coef = cache.qr.solve(fit.values[s + 1]);
    fit.dropped_columns += cache.qr.cols() - cache.qr.rank();
    const Eigen::VectorXd q_treat = cache.treat_design * coef;
    const Eigen::VectorXd q_control = cache.control_design * coef;
    Eigen::VectorXd q(q_treat.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      const int d = recommended_action(regime, panel, static_cast<std::size_t>(i), s);
      q(i) = d == kTreat ? q_treat(i) : q_control(i);
    }
    fit.coefficients[s] = std::move(coef);
    fit.values[s] = std::move(q);
  }
  return fit;
}

QFunctionFit fit_q_functions(const Panel& panel, const Regime& regime, const std::vector<FeatureSpec>& specs) {
  return QFunctionCache(panel, specs).evaluate(panel, regime);
}

}  // namespace dtr
