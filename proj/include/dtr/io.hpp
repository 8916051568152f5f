#ifndef DTR_IO_HPP
#define DTR_IO_HPP

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtr/baw_select.hpp"
#include "dtr/panel.hpp"
#include "dtr/regime.hpp"
#include "dtr/surface.hpp"

namespace dtr {

enum class MissingPolicy { kDropRow, kFail };

struct StageColumns {
  std::vector<std::string> covariates;
  std::string treatment;
};

/// Column mapping for ingest_csv. An empty treatment map accepts the integer
/// codes of the panel's alphabet ("0" and "1").
struct IngestSchema {
  std::string id;  // optional
  std::vector<StageColumns> stages;
  std::string outcome;
  MissingPolicy missing = MissingPolicy::kFail;
  std::map<std::string, int> treatment_codes;
};

/**
 * Schema implied by the layout that write_panel_csv produces:
 * [id,] covariates of stage 1, A1, covariates of stage 2, A2, ..., outcome.
 * Treatment columns are the ones named A<t> for t = 1, 2, ...; the outcome is
 * the last column.
 */
IngestSchema infer_schema(const std::vector<std::string>& header);

struct IngestReport {
  std::size_t rows_in = 0;
  std::size_t rows_out = 0;
  std::vector<std::string> dropped;  // "line N: reason"
};

Panel ingest_csv(std::istream& in, const IngestSchema& schema, IngestReport* report = nullptr);
Panel ingest_csv(const std::filesystem::path& path, const std::optional<IngestSchema>& schema,
                 IngestReport* report = nullptr);

/// id, per-stage covariates and A<t>, Y; numbers in shortest round-trip form.
void write_panel_csv(std::ostream& out, const Panel& panel);

/**
 * Flat key-value configuration:
 *
 *   # comment
 *   section.key = value
 *   section.other = "quoted value # not a comment"
 *
 * Keys are [A-Za-z0-9_.-]+; duplicate keys are an error; text after an
 * unquoted '#' is a comment.
 */
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "config");
  static Config load(const std::filesystem::path& path);

  [[nodiscard]] std::optional<std::string> get(const std::string& key) const;
  [[nodiscard]] std::optional<double> get_number(const std::string& key) const;
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

 private:
  std::map<std::string, std::string> values_;
};

/// "1:X1<=350;2:X2<=450", conjunctions with '&' ("1:X1<=430&X2<=80");
/// '>=' reverses the direction. Names resolve against the panel's stages.
Regime parse_regime(const std::string& text, const Panel& panel);
std::string format_regime(const Regime& regime, const Panel& panel);

/// "psi1=150:500:5,psi2=200:600:5"; a bare number is a one-value axis.
std::vector<GridAxis> parse_grid(const std::string& text);

/// "s1c1=0:10:2,s2c1=0:10:2"; an optional ".lower" or ".upper" suffix on the
/// name restricts the axis to one side of the threshold.
std::vector<WindowAxis> parse_window_axes(const std::string& text);

/// Comma-separated list of estimator names.
std::vector<EstimatorSpec> parse_estimators(const std::string& text);

}  // namespace dtr

#endif  // DTR_IO_HPP
