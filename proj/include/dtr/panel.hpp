#ifndef DTR_PANEL_HPP
#define DTR_PANEL_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dtr {

/// Treatment codes of the binary alphabet.
inline constexpr int kControl = 0;
inline constexpr int kTreat = 1;

/// The declared treatment alphabet. Only {0, 1} is supported for now, but the
/// alphabet travels with the data so a categorical extension keeps the model.
struct TreatmentAlphabet {
  std::vector<int> codes{kControl, kTreat};

  [[nodiscard]] bool contains(int code) const;
  [[nodiscard]] bool is_binary() const { return codes == std::vector<int>{kControl, kTreat}; }
};

/// Covariates observed before stage-t decision plus the decision itself.
struct StageData {
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // n x p_t
  std::vector<int> treatment;  // n
};

/// Location of a named covariate: zero-based stage and column.
struct CovariateRef {
  std::size_t stage = 0;
  std::size_t column = 0;
};

/**
 * Rectangular longitudinal dataset: n trajectories over T stages plus a
 * terminal outcome. Immutable after construction; the constructor enforces
 * equal row counts, membership of every treatment in the alphabet, and finite
 * covariates and outcomes.
 */
class Panel {
 public:
  Panel(std::vector<StageData> stages, Eigen::VectorXd outcome, std::vector<std::string> ids = {},
        TreatmentAlphabet alphabet = {});

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(outcome_.size()); }
  [[nodiscard]] std::size_t stage_count() const { return stages_.size(); }
  [[nodiscard]] const StageData& stage(std::size_t t) const { return stages_.at(t); }
  [[nodiscard]] const std::vector<StageData>& stages() const { return stages_; }
  [[nodiscard]] const Eigen::VectorXd& outcome() const { return outcome_; }
  [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }
  [[nodiscard]] const TreatmentAlphabet& alphabet() const { return alphabet_; }

  [[nodiscard]] double covariate(std::size_t t, std::size_t i, std::size_t j) const { return stages_[t].covariates(i, j); }
  [[nodiscard]] int treatment(std::size_t t, std::size_t i) const { return stages_[t].treatment[i]; }

  /// Row i of the stage-t covariate matrix, copied into `out`.
  void covariate_row(std::size_t t, std::size_t i, std::vector<double>& out) const;

  /// Observed (min, max) of a stage covariate.
  [[nodiscard]] std::pair<double, double> covariate_range(std::size_t t, std::size_t j) const;

  [[nodiscard]] std::optional<CovariateRef> find_covariate(const std::string& name) const;

  /// Panel restricted to `rows` (duplicates allowed, as in bootstrap resamples).
  [[nodiscard]] Panel subset(std::span<const std::size_t> rows) const;

 private:
  std::vector<StageData> stages_;
  Eigen::VectorXd outcome_;
  std::vector<std::string> ids_;
  TreatmentAlphabet alphabet_;
};

}  // namespace dtr

#endif  // DTR_PANEL_HPP
