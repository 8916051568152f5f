#include "dtr/io.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dtr/csv.hpp"
#include "dtr/error.hpp"

namespace dtr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : s) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double number_or_fail(const std::string& text, const std::string& what) {
  const auto v = parse_number(text);
  if (!v) {
    fail(ErrorCode::kInvalidArgument, what + ": '" + text + "' is not a number");
  }
  return *v;
}

std::vector<double> parse_range(const std::string& text, const std::string& what) {
  const auto parts = split(text, ':');
  if (parts.size() == 1) {
    return {number_or_fail(parts[0], what)};
  }
  require(parts.size() == 3, what + ": expected from:to:step, got '" + text + "'");
  return grid_values(number_or_fail(parts[0], what), number_or_fail(parts[1], what), number_or_fail(parts[2], what));
}

bool is_treatment_column(const std::string& name, std::size_t stage) { return name == "A" + std::to_string(stage); }

}  // namespace

IngestSchema infer_schema(const std::vector<std::string>& header) {
  require(header.size() >= 3, "cannot infer a schema from fewer than three columns");
  IngestSchema schema;
  std::size_t start = 0;
  if (header.front() == "id") {
    schema.id = "id";
    start = 1;
  }
  schema.outcome = header.back();
  StageColumns current;
  for (std::size_t c = start; c + 1 < header.size(); ++c) {
    if (is_treatment_column(header[c], schema.stages.size() + 1)) {
      current.treatment = header[c];
      schema.stages.push_back(std::move(current));
      current = {};
    } else {
      current.covariates.push_back(header[c]);
    }
  }
  if (schema.stages.empty() || !current.covariates.empty()) {
    fail(ErrorCode::kData, "header does not follow the [id,] X.., A1, X.., A2, .., Y layout; supply a schema");
  }
  return schema;
}

Panel ingest_csv(std::istream& in, const IngestSchema& schema, IngestReport* report) {
  const CsvTable table = read_csv(in);
  require(!schema.stages.empty(), "ingest schema has no stages");
  auto column = [&](const std::string& name) {
    const auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) {
      fail(ErrorCode::kData, "column '" + name + "' named by the schema is not in the header");
    }
    return static_cast<std::size_t>(it - table.header.begin());
  };
  std::optional<std::size_t> id_col;
  if (!schema.id.empty()) {
    id_col = column(schema.id);
  }
  const std::size_t y_col = column(schema.outcome);
  std::vector<std::vector<std::size_t>> cov_cols(schema.stages.size());
  std::vector<std::size_t> a_cols;
  for (std::size_t t = 0; t < schema.stages.size(); ++t) {
    for (const auto& name : schema.stages[t].covariates) {
      cov_cols[t].push_back(column(name));
    }
    a_cols.push_back(column(schema.stages[t].treatment));
  }

  IngestReport local;
  local.rows_in = table.rows.size();
  std::vector<std::vector<std::vector<double>>> covs(schema.stages.size());
  std::vector<std::vector<int>> acts(schema.stages.size());
  std::vector<double> ys;
  std::vector<std::string> ids;

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = "line " + std::to_string(table.line_numbers[r]);
    auto missing = [&](std::size_t col) {
      const auto v = trim(row[col]);
      return v.empty() || v == "NA";
    };
    std::optional<std::string> drop_reason;
    auto check_missing = [&](std::size_t col) {
      if (!drop_reason && missing(col)) {
        drop_reason = "missing value in column '" + table.header[col] + "'";
      }
    };
    check_missing(y_col);
    for (std::size_t t = 0; t < schema.stages.size(); ++t) {
      for (const auto c : cov_cols[t]) {
        check_missing(c);
      }
      check_missing(a_cols[t]);
    }
    if (drop_reason) {
      if (schema.missing == MissingPolicy::kFail) {
        fail(ErrorCode::kData, where + ": " + *drop_reason);
      }
      local.dropped.push_back(where + ": " + *drop_reason);
      continue;
    }
    auto number = [&](std::size_t col) {
      const auto v = parse_number(row[col]);
      if (!v) {
        fail(ErrorCode::kData, where + ", column '" + table.header[col] + "': cannot parse '" + row[col] + "'");
      }
      return *v;
    };
    for (std::size_t t = 0; t < schema.stages.size(); ++t) {
      std::vector<double> x;
      for (const auto c : cov_cols[t]) {
        x.push_back(number(c));
      }
      covs[t].push_back(std::move(x));
      const auto raw = trim(row[a_cols[t]]);
      int code = 0;
      if (!schema.treatment_codes.empty()) {
        const auto it = schema.treatment_codes.find(raw);
        if (it == schema.treatment_codes.end()) {
          fail(ErrorCode::kData, where + ", column '" + table.header[a_cols[t]] + "': treatment code '" + raw +
                                     "' is not in the treatment map");
        }
        code = it->second;
      } else if (raw == "0" || raw == "1") {
        code = raw == "1" ? kTreat : kControl;
      } else {
        fail(ErrorCode::kData, where + ", column '" + table.header[a_cols[t]] + "': treatment code '" + raw +
                                   "' is not 0 or 1");
      }
      acts[t].push_back(code);
    }
    ys.push_back(number(y_col));
    if (id_col) {
      ids.push_back(trim(row[*id_col]));
    }
  }
  local.rows_out = ys.size();
  if (ys.empty()) {
    fail(ErrorCode::kData, "no rows left after ingestion");
  }
  std::vector<StageData> stages;
  for (std::size_t t = 0; t < schema.stages.size(); ++t) {
    StageData s;
    s.covariate_names = schema.stages[t].covariates;
    s.covariates.resize(static_cast<Eigen::Index>(ys.size()), static_cast<Eigen::Index>(cov_cols[t].size()));
    for (std::size_t i = 0; i < ys.size(); ++i) {
      for (std::size_t j = 0; j < cov_cols[t].size(); ++j) {
        s.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = covs[t][i][j];
      }
    }
    s.treatment = std::move(acts[t]);
    stages.push_back(std::move(s));
  }
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  if (report != nullptr) {
    *report = std::move(local);
  }
  return Panel(std::move(stages), std::move(y), std::move(ids));
}

Panel ingest_csv(const std::filesystem::path& path, const std::optional<IngestSchema>& schema, IngestReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCode::kData, "cannot open " + path.string());
  }
  if (schema) {
    return ingest_csv(in, *schema, report);
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::istringstream probe(text);
  const auto header = read_csv(probe).header;
  std::istringstream body(text);
  return ingest_csv(body, infer_schema(header), report);
}

void write_panel_csv(std::ostream& out, const Panel& panel) {
  CsvWriter csv(out);
  csv.field("id");
  for (std::size_t t = 0; t < panel.stage_count(); ++t) {
    for (const auto& name : panel.stage(t).covariate_names) {
      csv.field(name);
    }
    csv.field("A" + std::to_string(t + 1));
  }
  csv.field("Y").end_row();
  for (std::size_t i = 0; i < panel.size(); ++i) {
    csv.field(panel.ids().empty() ? std::to_string(i + 1) : panel.ids()[i]);
    for (std::size_t t = 0; t < panel.stage_count(); ++t) {
      for (std::size_t j = 0; j < panel.stage(t).covariate_names.size(); ++j) {
        csv.field(panel.covariate(t, i, j));
      }
      csv.field(std::to_string(panel.treatment(t, i)));
    }
    csv.field(panel.outcome()(static_cast<Eigen::Index>(i))).end_row();
  }
}

Config Config::parse(std::istream& in, const std::string& source) {
  Config config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    // Strip an unquoted comment.
    bool quoted = false;
    std::string body;
    for (const char ch : line) {
      if (ch == '"') {
        quoted = !quoted;
      }
      if (ch == '#' && !quoted) {
        break;
      }
      body += ch;
    }
    if (quoted) {
      fail(ErrorCode::kInvalidArgument, where + ": unterminated quote");
    }
    body = trim(body);
    if (body.empty()) {
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidArgument, where + ": expected 'section.key = value'");
    }
    const auto key = trim(body.substr(0, eq));
    auto value = trim(body.substr(eq + 1));
    if (key.empty() || !std::all_of(key.begin(), key.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
        })) {
      fail(ErrorCode::kInvalidArgument, where + ": invalid key '" + key + "'");
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (config.values_.count(key) != 0) {
      fail(ErrorCode::kInvalidArgument, where + ": duplicate key '" + key + "'");
    }
    config.values_[key] = value;
  }
  return config;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorCode::kInvalidArgument, "cannot open config file " + path.string());
  }
  return parse(in, path.string());
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::optional<double> Config::get_number(const std::string& key) const {
  const auto v = get(key);
  if (!v) {
    return std::nullopt;
  }
  return number_or_fail(*v, "config key " + key);
}

Regime parse_regime(const std::string& text, const Panel& panel) {
  std::vector<std::vector<Clause>> stages(panel.stage_count());
  std::vector<bool> seen(panel.stage_count(), false);
  for (const auto& part : split(text, ';')) {
    if (part.empty()) {
      continue;
    }
    const auto colon = part.find(':');
    require(colon != std::string::npos, "regime stage '" + part + "' must look like '1:X1<=350'");
    const double stage_num = number_or_fail(trim(part.substr(0, colon)), "regime stage number");
    require(stage_num >= 1 && stage_num <= static_cast<double>(panel.stage_count()) &&
                stage_num == static_cast<double>(static_cast<std::size_t>(stage_num)),
            "regime stage number out of range in '" + part + "'");
    const auto t = static_cast<std::size_t>(stage_num) - 1;
    require(!seen[t], "regime names stage " + std::to_string(t + 1) + " twice");
    seen[t] = true;
    for (const auto& clause : split(part.substr(colon + 1), '&')) {
      auto op = clause.find("<=");
      Direction dir = Direction::kLessEqual;
      if (op == std::string::npos) {
        op = clause.find(">=");
        dir = Direction::kGreaterEqual;
      }
      require(op != std::string::npos, "clause '" + clause + "' needs <= or >=");
      const auto name = trim(clause.substr(0, op));
      const auto& names = panel.stage(t).covariate_names;
      const auto it = std::find(names.begin(), names.end(), name);
      require(it != names.end(), "stage " + std::to_string(t + 1) + " has no covariate '" + name + "'");
      stages[t].push_back(Clause{static_cast<std::size_t>(it - names.begin()),
                                 number_or_fail(trim(clause.substr(op + 2)), "threshold"), dir});
    }
  }
  for (std::size_t t = 0; t < seen.size(); ++t) {
    require(seen[t], "regime does not define stage " + std::to_string(t + 1));
  }
  return Regime(std::move(stages));
}

std::string format_regime(const Regime& regime, const Panel& panel) {
  std::string out;
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    if (t > 0) {
      out += ';';
    }
    out += std::to_string(t + 1) + ":";
    const auto& clauses = regime.clauses(t);
    for (std::size_t k = 0; k < clauses.size(); ++k) {
      if (k > 0) {
        out += '&';
      }
      out += panel.stage(t).covariate_names.at(clauses[k].covariate);
      out += clauses[k].direction == Direction::kLessEqual ? "<=" : ">=";
      out += format_number(clauses[k].threshold);
    }
  }
  return out;
}

std::vector<GridAxis> parse_grid(const std::string& text) {
  std::vector<GridAxis> axes;
  for (const auto& part : split(text, ',')) {
    const auto eq = part.find('=');
    require(eq != std::string::npos, "grid axis '" + part + "' must look like name=from:to:step");
    axes.push_back({trim(part.substr(0, eq)), parse_range(trim(part.substr(eq + 1)), "grid axis")});
  }
  return axes;
}

std::vector<WindowAxis> parse_window_axes(const std::string& text) {
  std::vector<WindowAxis> axes;
  for (const auto& part : split(text, ',')) {
    const auto eq = part.find('=');
    require(eq != std::string::npos, "window axis '" + part + "' must look like s1c1=0:10:2");
    auto name = trim(part.substr(0, eq));
    WindowAxis axis;
    if (name.ends_with(".lower")) {
      axis.side = WindowSide::kLower;
      name.resize(name.size() - 6);
    } else if (name.ends_with(".upper")) {
      axis.side = WindowSide::kUpper;
      name.resize(name.size() - 6);
    }
    const auto c = name.find('c');
    require(name.size() >= 4 && name[0] == 's' && c != std::string::npos && c > 1,
            "window axis name '" + name + "' must look like s<stage>c<clause>");
    const double s = number_or_fail(name.substr(1, c - 1), "window stage");
    const double k = number_or_fail(name.substr(c + 1), "window clause");
    require(s >= 1 && k >= 1, "window stage and clause numbers start at 1");
    axis.stage = static_cast<std::size_t>(s) - 1;
    axis.clause = static_cast<std::size_t>(k) - 1;
    axis.values = parse_range(trim(part.substr(eq + 1)), "window axis");
    axes.push_back(std::move(axis));
  }
  return axes;
}

std::vector<EstimatorSpec> parse_estimators(const std::string& text) {
  std::vector<EstimatorSpec> out;
  for (const auto& name : split(text, ',')) {
    const auto spec = EstimatorSpec::parse(name);
    if (std::find(out.begin(), out.end(), spec) == out.end()) {
      out.push_back(spec);
    }
  }
  require(!out.empty(), "no estimators given");
  return out;
}

}  // namespace dtr
