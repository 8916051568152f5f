#ifndef DTR_STUDY_HPP
#define DTR_STUDY_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dtr/baw_select.hpp"
#include "dtr/estimators.hpp"
#include "dtr/simgen.hpp"
#include "dtr/surface.hpp"

namespace dtr {

/// How the GAW constant c is chosen in each replicate.
enum class GawTuning {
  kFixed,          // c as configured
  kSurfaceRange,   // c = m / (max - min of the replicate's nIPW value surface)
  kOutcomeRange,   // c = m / (max - min of the replicate's outcomes)
};

std::string_view to_string(GawTuning tuning) noexcept;
GawTuning parse_gaw_tuning(std::string_view name);

struct StudyConfig {
  DgpSpec dgp;
  std::vector<std::size_t> sample_sizes{1000};
  std::size_t replications = 100;
  std::vector<GridAxis> grid;  // empty: the generator's default grid
  std::vector<EstimatorSpec> estimators{EstimatorSpec::parse("nipw"), EstimatorSpec::parse("ngaw"),
                                        EstimatorSpec::parse("nbaw")};
  GawConfig gaw{0.18, 0.5};
  GawTuning gaw_tuning = GawTuning::kFixed;
  double gaw_m = 15.0;
  BawConfig baw;  // empty axes: the generator's default window grid
  std::size_t truth_mc = 200000;
  std::size_t external_n = 10000;
  std::size_t coverage_bootstrap = 0;  // 0 disables threshold coverage
  std::uint64_t seed = 1;
  unsigned threads = 1;

  /// Fills defaults that depend on the generator; validates the rest.
  [[nodiscard]] StudyConfig resolved() const;
};

struct SurfaceSummaryRow {
  std::size_t n = 0;
  std::string method;
  double var_mean = 0, var_sd = 0, bias_mean = 0, bias_sd = 0, rmse_mean = 0, rmse_sd = 0;
  std::optional<double> ess_mean, ess_sd;
  std::optional<double> pct_var_reduction;  // share of cells with variance below nIPW's
  std::size_t cells = 0;
  std::size_t incomplete_cells = 0;  // cells missing in at least one replicate
};

struct ThresholdRow {
  std::size_t n = 0;
  std::string method;
  std::vector<ThresholdSummary> axes;
  std::vector<std::optional<double>> coverage;  // per axis, when enabled
  double pot_mean = 0, pot_sd = 0, value_mean = 0, value_sd = 0;
  std::size_t replicates = 0;
};

struct VarianceRow {
  std::size_t n = 0;
  std::string method;
  double mc_mean = 0, mc_sd = 0, analytic_mean = 0, analytic_sd = 0, ratio = 0;
};

struct CellRow {
  std::size_t n = 0;
  std::string method;
  std::vector<double> psi;
  double truth = 0;
  std::size_t count = 0;
  double mean = 0, variance = 0, bias = 0, rmse = 0;
  std::optional<double> ess, analytic_variance, gap_mean, bound_mean;
};

struct EssDifferenceRow {
  std::size_t n = 0, replicate = 0;
  std::string comparison;
  double mean_difference = 0;
};

struct WeightSpreadRow {
  std::size_t n = 0, replicate = 0;
  std::string weighting;
  double spread = 0;  // 99th - 1st percentile of positive terminal weights at the true regime
};

struct BalanceRow {
  std::size_t n = 0, stage = 0;
  std::string covariate;
  double smd_unweighted = 0, smd_weighted = 0;
};

struct ReplicateLogRow {
  std::size_t n = 0, replicate = 0;
  std::string status;
  std::optional<double> gaw_c;
  std::string message;
};

struct StudyResult {
  std::vector<GridAxis> grid;
  std::vector<std::vector<double>> cells;
  std::vector<double> truth;
  std::vector<double> true_psi;
  double true_value = 0;
  std::vector<SurfaceSummaryRow> surface;
  std::vector<ThresholdRow> thresholds;
  std::vector<VarianceRow> variance;
  std::vector<CellRow> cell_rows;
  std::vector<EssDifferenceRow> ess_differences;
  std::vector<WeightSpreadRow> weight_spread;
  std::vector<BalanceRow> balance;
  std::vector<ReplicateLogRow> log;
};

StudyResult run_study(const StudyConfig& config);

/// Mean, sample variance (divisor R - 1), bias and rMSE of estimates against
/// a known truth. Bias^2 + variance * (R - 1) / R equals mean squared error.
struct ReplicateMetrics {
  double mean = 0, variance = 0, bias = 0, rmse = 0;
};
ReplicateMetrics replicate_metrics(const std::vector<double>& estimates, double truth);

/// Writes every table plus manifest.json into `dir` (created if needed).
void write_study(const std::filesystem::path& dir, const StudyConfig& config, const StudyResult& result);

std::string manifest_json(const StudyConfig& config);
StudyConfig parse_manifest(const std::string& json_text);

}  // namespace dtr

#endif  // DTR_STUDY_HPP
