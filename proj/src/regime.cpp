#include "dtr/regime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dtr/error.hpp"

namespace dtr {

Regime::Regime(std::vector<std::vector<Clause>> stages, int treat_action, int control_action)
    : stages_(std::move(stages)), treat_action_(treat_action), control_action_(control_action) {
  require(!stages_.empty(), "regime needs at least one stage");
  require(treat_action_ != control_action_, "treat and control actions must differ");
  for (std::size_t t = 0; t < stages_.size(); ++t) {
    require(!stages_[t].empty(), "regime stage " + std::to_string(t + 1) + " has no clauses");
    for (const auto& c : stages_[t]) {
      require(std::isfinite(c.threshold), "regime threshold must be finite");
    }
  }
}

std::size_t Regime::clause_count() const {
  std::size_t total = 0;
  for (const auto& s : stages_) {
    total += s.size();
  }
  return total;
}

std::vector<double> Regime::thresholds() const {
  std::vector<double> psi;
  psi.reserve(clause_count());
  for (const auto& s : stages_) {
    for (const auto& c : s) {
      psi.push_back(c.threshold);
    }
  }
  return psi;
}

Regime Regime::with_thresholds(std::span<const double> psi) const {
  require(psi.size() == clause_count(), "threshold count does not match the regime's clause count");
  auto stages = stages_;
  std::size_t k = 0;
  for (auto& s : stages) {
    for (auto& c : s) {
      c.threshold = psi[k++];
    }
  }
  return Regime(std::move(stages), treat_action_, control_action_);
}

Regime Regime::complement() const {
  auto stages = stages_;
  for (auto& s : stages) {
    for (auto& c : s) {
      c.direction = c.direction == Direction::kLessEqual ? Direction::kGreaterEqual : Direction::kLessEqual;
    }
  }
  return Regime(std::move(stages), control_action_, treat_action_);
}

int Regime::recommend(std::size_t t, std::span<const double> row) const {
  const auto& clauses = stages_.at(t);
  bool all = true;
  for (const auto& c : clauses) {
    if (c.covariate >= row.size()) {
      fail(ErrorCode::kInvalidArgument, "clause covariate index " + std::to_string(c.covariate) +
                                            " missing from stage " + std::to_string(t + 1) + " row");
    }
    all = all && c.holds(row[c.covariate]);
  }
  return all ? treat_action_ : control_action_;
}

std::vector<std::string> validate_regime(const Regime& regime, const Panel& panel) {
  require(regime.stage_count() == panel.stage_count(), "regime has " + std::to_string(regime.stage_count()) +
                                                           " stages but panel has " +
                                                           std::to_string(panel.stage_count()));
  std::vector<std::string> warnings;
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    const auto p = static_cast<std::size_t>(panel.stage(t).covariates.cols());
    for (const auto& c : regime.clauses(t)) {
      require(c.covariate < p, "stage " + std::to_string(t + 1) + " clause references covariate " +
                                   std::to_string(c.covariate) + " of " + std::to_string(p));
      if (panel.size() == 0) {
        continue;
      }
      const auto [lo, hi] = panel.covariate_range(t, c.covariate);
      if (c.threshold < lo || c.threshold > hi) {
        std::ostringstream msg;
        msg << "stage " << t + 1 << " threshold " << c.threshold << " on " << panel.stage(t).covariate_names[c.covariate]
            << " lies outside the observed range [" << lo << ", " << hi << "]";
        warnings.push_back(msg.str());
      }
    }
  }
  return warnings;
}

namespace {

// Inline row access avoids a copy per call in the hot weighting loops.
template <class Pred>
bool all_clauses(const std::vector<Clause>& clauses, const Panel& panel, std::size_t t, std::size_t i, Pred pred) {
  const auto& x = panel.stage(t).covariates;
  for (std::size_t k = 0; k < clauses.size(); ++k) {
    const auto j = clauses[k].covariate;
    if (j >= static_cast<std::size_t>(x.cols())) {
      fail(ErrorCode::kInvalidArgument, "clause covariate index " + std::to_string(j) + " missing from stage " +
                                            std::to_string(t + 1) + " row");
    }
    if (!pred(k, x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))) {
      return false;
    }
  }
  return true;
}

}  // namespace

int recommended_action(const Regime& regime, const Panel& panel, std::size_t i, std::size_t t) {
  const auto& clauses = regime.clauses(t);
  const bool treat = all_clauses(clauses, panel, t, i, [&](std::size_t k, double x) { return clauses[k].holds(x); });
  return treat ? regime.treat_action() : regime.control_action();
}

bool strict_adherence(const Regime& regime, const Panel& panel, std::size_t i, std::size_t t) {
  require(i < panel.size() && t < panel.stage_count(), "strict_adherence: index out of range");
  return panel.treatment(t, i) == recommended_action(regime, panel, i, t);
}

WindowSpec::WindowSpec(std::vector<std::vector<Tolerance>> tolerances) : tolerances_(std::move(tolerances)) {
  for (const auto& s : tolerances_) {
    for (const auto& tol : s) {
      require(tol.lower >= 0.0 && tol.upper >= 0.0 && std::isfinite(tol.lower) && std::isfinite(tol.upper),
              "window tolerances must be finite and non-negative");
    }
  }
}

WindowSpec WindowSpec::strict(const Regime& regime) {
  std::vector<std::vector<Tolerance>> tol(regime.stage_count());
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    tol[t].assign(regime.clauses(t).size(), Tolerance{});
  }
  return WindowSpec(std::move(tol));
}

bool WindowSpec::is_strict() const { return max_abs() == 0.0; }

double WindowSpec::max_abs() const {
  double m = 0.0;
  for (const auto& s : tolerances_) {
    for (const auto& tol : s) {
      m = std::max({m, tol.lower, tol.upper});
    }
  }
  return m;
}

std::vector<std::vector<ClauseBounds>> clause_bounds(const Regime& regime, const Panel& panel) {
  std::vector<std::vector<ClauseBounds>> out(regime.stage_count());
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    for (const auto& c : regime.clauses(t)) {
      const auto [lo, hi] = panel.covariate_range(t, c.covariate);
      out[t].push_back({lo, hi});
    }
  }
  return out;
}

bool window_admissible(const Regime& regime, const WindowSpec& window,
                       const std::vector<std::vector<ClauseBounds>>& bounds,
                       const std::vector<std::vector<double>>& delta_max) {
  if (window.stage_count() != regime.stage_count() || bounds.size() != regime.stage_count()) {
    return false;
  }
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    const auto& clauses = regime.clauses(t);
    if (window.stage(t).size() != clauses.size() || bounds[t].size() != clauses.size()) {
      return false;
    }
    for (std::size_t k = 0; k < clauses.size(); ++k) {
      const auto& tol = window.stage(t)[k];
      const auto cap = delta_max.empty() || delta_max[t].empty() ? std::numeric_limits<double>::infinity()
                                                                  : delta_max[t][k];
      const double psi = clauses[k].threshold;
      // Zero tolerances are always admissible, even for thresholds outside the data range.
      if (tol.lower > 0.0 && tol.lower > std::min(cap, psi - bounds[t][k].lo)) {
        return false;
      }
      if (tol.upper > 0.0 && tol.upper > std::min(cap, bounds[t][k].hi - psi)) {
        return false;
      }
    }
  }
  return true;
}

WindowSpec make_window(const Regime& regime, std::vector<std::vector<Tolerance>> tolerances,
                       const std::vector<std::vector<ClauseBounds>>& bounds,
                       const std::vector<std::vector<double>>& delta_max) {
  WindowSpec window(std::move(tolerances));
  require(window_admissible(regime, window, bounds, delta_max),
          "window violates the directional constraints for this regime");
  return window;
}

bool windowed_compatible(std::span<const Clause> clauses, std::span<const Tolerance> tolerances,
                         std::span<const double> row, int action, int treat_action, int control_action) {
  if (action == treat_action) {
    for (std::size_t k = 0; k < clauses.size(); ++k) {
      const auto& c = clauses[k];
      const double x = row[c.covariate];
      const bool ok = c.direction == Direction::kLessEqual ? x <= c.threshold + tolerances[k].upper
                                                           : x >= c.threshold - tolerances[k].lower;
      if (!ok) {
        return false;
      }
    }
    return true;
  }
  if (action == control_action) {
    for (std::size_t k = 0; k < clauses.size(); ++k) {
      const auto& c = clauses[k];
      const double x = row[c.covariate];
      const bool fails = c.direction == Direction::kLessEqual ? x > c.threshold - tolerances[k].lower
                                                              : x < c.threshold + tolerances[k].upper;
      if (fails) {
        return true;
      }
    }
    return false;
  }
  return false;
}

bool windowed_compatibility(const Regime& regime, const WindowSpec& window, const Panel& panel, std::size_t i,
                            std::size_t t) {
  const auto& clauses = regime.clauses(t);
  const auto& tol = window.stage(t);
  require(tol.size() == clauses.size(), "window shape does not match regime stage " + std::to_string(t + 1));
  thread_local std::vector<double> row;
  panel.covariate_row(t, i, row);
  for (const auto& c : clauses) {
    require(c.covariate < row.size(), "clause covariate index out of range");
  }
  return windowed_compatible(clauses, tol, row, panel.treatment(t, i), regime.treat_action(),
                             regime.control_action());
}

}  // namespace dtr
