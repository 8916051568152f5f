#include "dtr/panel.hpp"

#include <algorithm>
#include <cmath>

#include "dtr/error.hpp"

namespace dtr {

bool TreatmentAlphabet::contains(int code) const { return std::find(codes.begin(), codes.end(), code) != codes.end(); }

Panel::Panel(std::vector<StageData> stages, Eigen::VectorXd outcome, std::vector<std::string> ids,
             TreatmentAlphabet alphabet)
    : stages_(std::move(stages)), outcome_(std::move(outcome)), ids_(std::move(ids)), alphabet_(std::move(alphabet)) {
  const auto n = static_cast<std::size_t>(outcome_.size());
  require(!stages_.empty(), "panel needs at least one stage");
  require(alphabet_.is_binary(), "only the binary treatment alphabet {0,1} is supported");
  if (!ids_.empty()) {
    require(ids_.size() == n, "id column length differs from outcome length");
  }
  for (std::size_t t = 0; t < stages_.size(); ++t) {
    auto& s = stages_[t];
    const auto label = "stage " + std::to_string(t + 1);
    if (static_cast<std::size_t>(s.covariates.rows()) != n || s.treatment.size() != n) {
      fail(ErrorCode::kData, label + ": row count differs from outcome length");
    }
    if (s.covariate_names.empty()) {
      for (Eigen::Index j = 0; j < s.covariates.cols(); ++j) {
        s.covariate_names.push_back("s" + std::to_string(t + 1) + "_x" + std::to_string(j + 1));
      }
    }
    if (s.covariate_names.size() != static_cast<std::size_t>(s.covariates.cols())) {
      fail(ErrorCode::kData, label + ": covariate name count differs from column count");
    }
    if (!s.covariates.allFinite()) {
      fail(ErrorCode::kData, label + ": non-finite covariate");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!alphabet_.contains(s.treatment[i])) {
        fail(ErrorCode::kData, label + ": treatment outside alphabet at row " + std::to_string(i + 1));
      }
    }
  }
  if (!outcome_.allFinite()) {
    fail(ErrorCode::kData, "non-finite outcome");
  }
}

void Panel::covariate_row(std::size_t t, std::size_t i, std::vector<double>& out) const {
  const auto& x = stages_[t].covariates;
  out.resize(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    out[static_cast<std::size_t>(j)] = x(static_cast<Eigen::Index>(i), j);
  }
}

std::pair<double, double> Panel::covariate_range(std::size_t t, std::size_t j) const {
  const auto col = stages_.at(t).covariates.col(static_cast<Eigen::Index>(j));
  if (col.size() == 0) {
    return {0.0, 0.0};
  }
  return {col.minCoeff(), col.maxCoeff()};
}

std::optional<CovariateRef> Panel::find_covariate(const std::string& name) const {
  for (std::size_t t = 0; t < stages_.size(); ++t) {
    const auto& names = stages_[t].covariate_names;
    const auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) {
      return CovariateRef{t, static_cast<std::size_t>(it - names.begin())};
    }
  }
  return std::nullopt;
}

Panel Panel::subset(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  std::vector<StageData> stages;
  stages.reserve(stages_.size());
  for (const auto& s : stages_) {
    StageData out;
    out.covariate_names = s.covariate_names;
    out.covariates.resize(m, s.covariates.cols());
    out.treatment.resize(rows.size());
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto src = rows[static_cast<std::size_t>(r)];
      out.covariates.row(r) = s.covariates.row(static_cast<Eigen::Index>(src));
      out.treatment[static_cast<std::size_t>(r)] = s.treatment[src];
    }
    stages.push_back(std::move(out));
  }
  Eigen::VectorXd y(m);
  std::vector<std::string> ids;
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto src = rows[static_cast<std::size_t>(r)];
    y(r) = outcome_(static_cast<Eigen::Index>(src));
    if (!ids_.empty()) {
      ids.push_back(ids_[src]);
    }
  }
  return Panel(std::move(stages), std::move(y), std::move(ids), alphabet_);
}

}  // namespace dtr
