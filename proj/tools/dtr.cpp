// Command-line front end: simulate, estimate, surface, select-window, study.

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtr/baw_select.hpp"
#include "dtr/csv.hpp"
#include "dtr/error.hpp"
#include "dtr/io.hpp"
#include "dtr/simgen.hpp"
#include "dtr/study.hpp"
#include "dtr/surface.hpp"

namespace {

using dtr::Config;
using dtr::ErrorCode;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitStatistical = 4;
constexpr int kSchemaVersion = 1;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    case ErrorCode::kData:
      return kExitData;
    default:
      return kExitStatistical;
  }
}

ordered_json json_number(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) {
    return nullptr;
  }
  return *v;
}

ordered_json error_json(ErrorCode code, const std::string& message) {
  return {{"code", std::string(dtr::to_string(code))}, {"message", message}};
}

struct Globals {
  std::string seed;
  std::string threads;
  std::string config_path;
  std::string out_dir;
};

// Flag value if given, otherwise the config entry.
class Options {
 public:
  Options(const Globals& g, Config config) : globals_(g), config_(std::move(config)) {}

  [[nodiscard]] std::optional<std::string> pick(const std::string& flag, const std::string& key) const {
    if (!flag.empty()) {
      return flag;
    }
    return config_.get(key);
  }
  [[nodiscard]] std::optional<double> number(const std::string& flag, const std::string& key) const {
    const auto v = pick(flag, key);
    if (!v) {
      return std::nullopt;
    }
    const auto x = dtr::parse_number(*v);
    dtr::require(x.has_value(), key + ": '" + *v + "' is not a number");
    return x;
  }
  [[nodiscard]] std::optional<std::size_t> count(const std::string& flag, const std::string& key) const {
    const auto v = number(flag, key);
    if (!v) {
      return std::nullopt;
    }
    dtr::require(*v >= 0 && *v == std::floor(*v), key + " must be a non-negative integer");
    return static_cast<std::size_t>(*v);
  }
  [[nodiscard]] bool flag(bool given, const std::string& key) const {
    if (given) {
      return true;
    }
    const auto v = config_.get(key);
    if (!v) {
      return false;
    }
    dtr::require(*v == "true" || *v == "false", key + " must be true or false");
    return *v == "true";
  }
  [[nodiscard]] std::filesystem::path out_dir() const {
    return pick(globals_.out_dir, "run.out_dir").value_or(".");
  }
  [[nodiscard]] unsigned threads() const {
    if (const auto v = count(globals_.threads, "run.threads")) {
      dtr::require(*v >= 1, "threads must be at least 1");
      return static_cast<unsigned>(*v);
    }
    if (const char* env = std::getenv("DTR_ENGINE_THREADS")) {
      const auto x = dtr::parse_number(env);
      dtr::require(x && *x >= 1, "DTR_ENGINE_THREADS must be a positive integer");
      return static_cast<unsigned>(*x);
    }
    return 1;
  }
  // Explicit seed, or a fresh one that is printed so the run can be repeated.
  [[nodiscard]] std::uint64_t seed() const {
    if (const auto v = pick(globals_.seed, "run.seed")) {
      std::uint64_t s = 0;
      const auto res = std::from_chars(v->data(), v->data() + v->size(), s);
      dtr::require(res.ec == std::errc() && res.ptr == v->data() + v->size(), "seed must be an unsigned integer");
      return s;
    }
    std::random_device rd;
    const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    std::cerr << "seed: " << s << " (pass --seed " << s << " to repeat this run)\n";
    return s;
  }
  [[nodiscard]] const Config& config() const { return config_; }

 private:
  const Globals& globals_;
  Config config_;
};

const std::set<std::string> kConfigKeys = {
    "run.seed",        "run.threads",          "run.out_dir",       "data.path",        "data.id",
    "data.outcome",    "data.missing",         "data.treatment_map", "estimate.regime", "estimate.estimators",
    "gaw.c",           "gaw.k",                "gaw.tuning",        "gaw.m",            "baw.windows",
    "baw.bootstrap",   "baw.lambda",           "baw.refit",         "baw.q",            "baw.max_excluded_fraction",
    "propensity.clamp", "surface.grid",        "simulate.dgp",      "simulate.n",       "simulate.noise",
    "study.sizes",     "study.replications",   "study.truth_mc",    "study.external_n", "study.coverage_bootstrap",
};

void check_config_keys(const Config& config) {
  for (const auto& [key, value] : config.values()) {
    if (kConfigKeys.count(key) != 0 || key.starts_with("simulate.param.")) {
      continue;
    }
    if (key.starts_with("data.stage") && (key.ends_with(".covariates") || key.ends_with(".treatment"))) {
      continue;
    }
    dtr::fail(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
}

std::optional<dtr::IngestSchema> schema_from_config(const Config& config) {
  bool any = false;
  for (const auto& [key, value] : config.values()) {
    any = any || (key.starts_with("data.") && key != "data.path");
  }
  if (!any) {
    return std::nullopt;
  }
  dtr::IngestSchema schema;
  schema.id = config.get("data.id").value_or("");
  const auto outcome = config.get("data.outcome");
  dtr::require(outcome.has_value(), "data.outcome is required when a data schema is configured");
  schema.outcome = *outcome;
  const auto missing = config.get("data.missing").value_or("fail");
  dtr::require(missing == "fail" || missing == "drop-row", "data.missing must be fail or drop-row");
  schema.missing = missing == "fail" ? dtr::MissingPolicy::kFail : dtr::MissingPolicy::kDropRow;
  if (const auto map = config.get("data.treatment_map")) {
    std::stringstream ss(*map);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto colon = item.rfind(':');
      dtr::require(colon != std::string::npos, "data.treatment_map entries look like code:action");
      const auto action = dtr::parse_number(item.substr(colon + 1));
      dtr::require(action && (*action == 0 || *action == 1), "treatment map actions must be 0 or 1");
      auto code = item.substr(0, colon);
      code.erase(0, code.find_first_not_of(' '));
      code.erase(code.find_last_not_of(' ') + 1);
      schema.treatment_codes[code] = static_cast<int>(*action);
    }
  }
  for (std::size_t t = 1;; ++t) {
    const auto prefix = "data.stage" + std::to_string(t);
    const auto covs = config.get(prefix + ".covariates");
    const auto treat = config.get(prefix + ".treatment");
    if (!covs && !treat) {
      break;
    }
    dtr::require(covs && treat, prefix + " needs both covariates and treatment");
    dtr::StageColumns stage;
    std::stringstream ss(*covs);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(' '));
      item.erase(item.find_last_not_of(' ') + 1);
      stage.covariates.push_back(item);
    }
    stage.treatment = *treat;
    schema.stages.push_back(std::move(stage));
  }
  dtr::require(!schema.stages.empty(), "data schema needs data.stage1.covariates and data.stage1.treatment");
  return schema;
}

dtr::Panel load_panel(const Options& o, const std::string& data_flag) {
  const auto path = o.pick(data_flag, "data.path");
  dtr::require(path.has_value(), "--data is required");
  dtr::IngestReport report;
  auto panel = dtr::ingest_csv(*path, schema_from_config(o.config()), &report);
  if (!report.dropped.empty()) {
    std::cerr << "ingest: " << report.rows_in << " rows read, " << report.rows_out << " kept\n";
    for (const auto& d : report.dropped) {
      std::cerr << "  dropped " << d << '\n';
    }
  }
  return panel;
}

struct EstimationFlags {
  std::string estimators, c, k, windows, bootstrap, lambda, q, clamp;
  bool refit = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--estimator", estimators, "Comma-separated estimators, e.g. nipw,ngaw,nabaw");
    cmd->add_option("--c", c, "GAW constant c in eps_n = c n^-k");
    cmd->add_option("--k", k, "GAW rate k");
    cmd->add_option("--windows", windows, "BAW window grid, e.g. s1c1=0:10:2,s2c1=0:10:2");
    cmd->add_option("--bootstrap", bootstrap, "BAW bootstrap replicates");
    cmd->add_option("--lambda", lambda, "BAW bias penalty");
    cmd->add_option("--q", q, "Cap windows at covariate range / q");
    cmd->add_option("--clamp", clamp, "Propensity clamp");
    cmd->add_flag("--refit", refit, "Refit nuisance models inside each BAW replicate");
  }

  [[nodiscard]] std::vector<dtr::EstimatorSpec> estimator_list(const Options& o) const {
    return dtr::parse_estimators(o.pick(estimators, "estimate.estimators").value_or("nipw"));
  }

  [[nodiscard]] dtr::EstimationSettings settings(const Options& o, const dtr::Panel& panel) const {
    dtr::EstimationSettings s;
    s.gaw.c = o.number(c, "gaw.c").value_or(0.0);
    s.gaw.k = o.number(k, "gaw.k").value_or(0.5);
    s.nuisance.clamp = o.number(clamp, "propensity.clamp").value_or(dtr::kDefaultPropensityClamp);
    s.nuisance = s.nuisance.resolved(panel);
    if (const auto w = o.pick(windows, "baw.windows")) {
      s.baw.axes = dtr::parse_window_axes(*w);
    }
    s.baw.bootstrap_count = o.count(bootstrap, "baw.bootstrap").value_or(100);
    s.baw.lambda_bias = o.number(lambda, "baw.lambda").value_or(1.0);
    s.baw.refit = o.flag(refit, "baw.refit");
    s.baw.q = o.number(q, "baw.q");
    if (const auto f = o.config().get_number("baw.max_excluded_fraction")) {
      s.baw.max_excluded_fraction = *f;
    }
    return s;
  }
};

bool uses_baw(const std::vector<dtr::EstimatorSpec>& specs) {
  return std::any_of(specs.begin(), specs.end(),
                     [](const dtr::EstimatorSpec& e) { return e.weighting == dtr::WeightKind::kBaw; });
}

// BAW without an explicit grid: one symmetric axis per clause, step
// range/q_default/5 up to range/35.
void default_windows(dtr::EstimationSettings& s, const dtr::Regime& regime, const dtr::Panel& panel) {
  if (!s.baw.axes.empty()) {
    return;
  }
  const auto bounds = dtr::clause_bounds(regime, panel);
  for (std::size_t t = 0; t < regime.stage_count(); ++t) {
    for (std::size_t k = 0; k < regime.clauses(t).size(); ++k) {
      const double dmax = dtr::delta_max(bounds[t][k].lo, bounds[t][k].hi, 35.0);
      s.baw.axes.push_back({t, k, dtr::WindowSide::kBoth, dtr::window_axis_values(dmax / 5.0, dmax)});
    }
  }
}

ordered_json window_json(const dtr::WindowSpec& w) {
  ordered_json stages = ordered_json::array();
  for (std::size_t t = 0; t < w.stage_count(); ++t) {
    ordered_json clauses = ordered_json::array();
    for (const auto& tol : w.stage(t)) {
      clauses.push_back({{"lower", tol.lower}, {"upper", tol.upper}});
    }
    stages.push_back(clauses);
  }
  return stages;
}

ordered_json cell_json(const dtr::CellEstimate& cell) {
  ordered_json j;
  j["estimator"] = cell.estimator.name();
  if (!cell.estimate) {
    j["error"] = {{"code", cell.missing_reason}, {"message", cell.message}};
    return j;
  }
  const auto& e = *cell.estimate;
  j["value"] = e.value;
  j["variance"] = json_number(e.variance);
  j["variance_heuristic"] = e.diagnostics.variance_heuristic;
  j["ess"] = json_number(e.ess);
  j["clamp_events"] = e.diagnostics.clamp_events;
  j["gamma_cap_events"] = e.diagnostics.gamma_cap_events;
  j["bias_bound"] = json_number(cell.bias_bound);
  if (e.diagnostics.window) {
    j["window"] = window_json(*e.diagnostics.window);
  }
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    dtr::fail(ErrorCode::kData, "cannot write " + path.string());
  }
  out << text;
}

int code_of(const std::string& reason) {
  for (const auto c : {ErrorCode::kInvalidArgument, ErrorCode::kData, ErrorCode::kNoAdherers, ErrorCode::kSeparation,
                       ErrorCode::kDisqualifiedWindow, ErrorCode::kNumerical}) {
    if (dtr::to_string(c) == reason) {
      return exit_code_for(c);
    }
  }
  return kExitStatistical;
}

dtr::DgpSpec dgp_from(const Options& o, const std::string& dgp_flag, const std::string& noise_flag,
                      const std::vector<std::string>& params) {
  dtr::DgpSpec spec;
  spec.kind = dtr::parse_dgp_kind(o.pick(dgp_flag, "simulate.dgp").value_or("sim1"));
  const auto noise = o.pick(noise_flag, "simulate.noise").value_or("sd");
  dtr::require(noise == "sd" || noise == "variance", "noise must be sd or variance");
  spec.noise = noise == "sd" ? dtr::NoiseScale::kStandardDeviation : dtr::NoiseScale::kVariance;
  for (const auto& [key, value] : o.config().values()) {
    if (key.starts_with("simulate.param.")) {
      spec.overrides[key.substr(15)] = *o.config().get_number(key);
    }
  }
  for (const auto& p : params) {
    const auto eq = p.find('=');
    dtr::require(eq != std::string::npos, "--param expects name=value");
    const auto v = dtr::parse_number(p.substr(eq + 1));
    dtr::require(v.has_value(), "--param value must be a number");
    spec.overrides[p.substr(0, eq)] = *v;
  }
  spec.validate();
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Threshold dynamic treatment regime value estimation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (printed when omitted)");
  app.add_option("--threads", g.threads, "Worker threads (default: DTR_ENGINE_THREADS or 1)");
  app.add_option("--config", g.config_path, "Flat key-value config file; flags override it");
  app.add_option("--out-dir", g.out_dir, "Directory for output files");
  app.fallthrough();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a panel from a built-in simulation design");
  std::string sim_dgp, sim_n, sim_noise, sim_out;
  std::vector<std::string> sim_params;
  sim->add_option("--dgp", sim_dgp, "sim1 or sim2");
  sim->add_option("--n", sim_n, "Sample size");
  sim->add_option("--noise", sim_noise, "Read N(mu, s) as sd (default) or variance");
  sim->add_option("--param", sim_params, "Override a generator parameter, name=value");
  sim->add_option("--out", sim_out, "Output CSV (default <out-dir>/panel.csv)");

  // estimate
  auto* est = app.add_subcommand("estimate", "Estimate the value of one regime");
  std::string est_data, est_regime, est_out;
  EstimationFlags est_flags;
  est->add_option("--data", est_data, "Panel CSV");
  est->add_option("--regime", est_regime, "Regime, e.g. '1:X1<=350;2:X2<=450'");
  est->add_option("--out", est_out, "Also write the JSON result here");
  est_flags.add_to(est);

  // surface
  auto* surf = app.add_subcommand("surface", "Evaluate a grid of thresholds");
  std::string surf_data, surf_regime, surf_grid;
  EstimationFlags surf_flags;
  surf->add_option("--data", surf_data, "Panel CSV");
  surf->add_option("--regime", surf_regime, "Regime template; its thresholds are replaced by grid values");
  surf->add_option("--grid", surf_grid, "Axes, e.g. psi1=150:500:5,psi2=200:600:5");
  surf_flags.add_to(surf);

  // select-window
  auto* sel = app.add_subcommand("select-window", "Bootstrap search for the BAW adherence window");
  std::string sel_data, sel_regime;
  bool sel_augmented = false;
  EstimationFlags sel_flags;
  sel->add_option("--data", sel_data, "Panel CSV");
  sel->add_option("--regime", sel_regime, "Regime, e.g. '1:X1<=350;2:X2<=450'");
  sel->add_flag("--augmented", sel_augmented, "Use the normalized augmented statistic");
  sel_flags.add_to(sel);

  // study
  auto* stu = app.add_subcommand("study", "Replicated simulation study");
  std::string stu_manifest, stu_dgp, stu_noise, stu_sizes, stu_reps, stu_grid, stu_tuning, stu_m, stu_truth, stu_ext,
      stu_cov;
  std::vector<std::string> stu_params;
  EstimationFlags stu_flags;
  stu->add_option("--manifest", stu_manifest, "Re-run a study from its manifest.json");
  stu->add_option("--dgp", stu_dgp, "sim1 or sim2");
  stu->add_option("--noise", stu_noise, "Read N(mu, s) as sd (default) or variance");
  stu->add_option("--param", stu_params, "Override a generator parameter, name=value");
  stu->add_option("--sizes", stu_sizes, "Comma-separated sample sizes");
  stu->add_option("--replications", stu_reps, "Replications per sample size");
  stu->add_option("--grid", stu_grid, "Threshold grid (default: the design's grid)");
  stu->add_option("--gaw-tuning", stu_tuning, "fixed, surface_range or outcome_range");
  stu->add_option("--gaw-m", stu_m, "m in c = m / range for the range tuning rules");
  stu->add_option("--truth-mc", stu_truth, "Monte Carlo size of the true value surface");
  stu->add_option("--external-n", stu_ext, "External sample size for POT and value");
  stu->add_option("--coverage-bootstrap", stu_cov, "Bootstrap replicates for threshold coverage (0: off)");
  stu_flags.add_to(stu);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    Config config;
    if (!g.config_path.empty()) {
      config = Config::load(g.config_path);
      check_config_keys(config);
    }
    const Options o(g, config);
    const auto out_dir = o.out_dir();

    if (sim->parsed()) {
      const auto spec = dgp_from(o, sim_dgp, sim_noise, sim_params);
      const auto n = o.count(sim_n, "simulate.n");
      dtr::require(n.has_value() && *n >= 1, "--n is required");
      const auto seed = o.seed();
      const auto panel = dtr::generate(spec, *n, seed);
      const std::filesystem::path path = sim_out.empty() ? out_dir / "panel.csv" : std::filesystem::path(sim_out);
      std::ostringstream csv;
      dtr::write_panel_csv(csv, panel);
      write_text(path, csv.str());
      ordered_json j{{"schema_version", kSchemaVersion}, {"command", "simulate"}, {"dgp", std::string(to_string(spec.kind))},
                     {"n", *n}, {"seed", seed}, {"path", path.string()}};
      std::cout << j.dump(2) << '\n';
      return kExitOk;
    }

    if (est->parsed()) {
      const auto panel = load_panel(o, est_data);
      const auto regime_text = o.pick(est_regime, "estimate.regime");
      dtr::require(regime_text.has_value(), "--regime is required");
      const auto regime = dtr::parse_regime(*regime_text, panel);
      for (const auto& w : dtr::validate_regime(regime, panel)) {
        std::cerr << "warning: " << w << '\n';
      }
      const auto specs = est_flags.estimator_list(o);
      auto settings = est_flags.settings(o, panel);
      ordered_json j{{"schema_version", kSchemaVersion}, {"command", "estimate"},
                     {"regime", dtr::format_regime(regime, panel)}, {"n", panel.size()}};
      if (uses_baw(specs)) {
        default_windows(settings, regime, panel);
        settings.seed = o.seed();
        j["seed"] = settings.seed;
      }
      const dtr::RegimeEvaluator evaluator(panel, settings, specs);
      const auto cells = evaluator.evaluate(regime);
      int rc = kExitOk;
      j["estimates"] = ordered_json::array();
      for (const auto& cell : cells) {
        j["estimates"].push_back(cell_json(cell));
        if (!cell.estimate && rc == kExitOk) {
          rc = code_of(cell.missing_reason);
        }
      }
      const auto text = j.dump(2) + "\n";
      std::cout << text;
      if (!est_out.empty()) {
        write_text(est_out, text);
      }
      return rc;
    }

    if (surf->parsed()) {
      const auto panel = load_panel(o, surf_data);
      const auto regime_text = o.pick(surf_regime, "estimate.regime");
      dtr::require(regime_text.has_value(), "--regime is required");
      const auto regime = dtr::parse_regime(*regime_text, panel);
      const auto grid_text = o.pick(surf_grid, "surface.grid");
      dtr::require(grid_text.has_value(), "--grid is required");
      const auto axes = dtr::parse_grid(*grid_text);
      const auto specs = surf_flags.estimator_list(o);
      auto settings = surf_flags.settings(o, panel);
      ordered_json j{{"schema_version", kSchemaVersion}, {"command", "surface"},
                     {"regime", dtr::format_regime(regime, panel)}, {"n", panel.size()}};
      if (uses_baw(specs)) {
        default_windows(settings, regime, panel);
        settings.seed = o.seed();
        j["seed"] = settings.seed;
      }
      const auto surface = dtr::evaluate_surface(panel, regime, axes, specs, settings, o.threads());
      std::ostringstream csv;
      dtr::write_surface_csv(csv, surface);
      write_text(out_dir / "surface.csv", csv.str());
      j["cells"] = surface.cells.size();
      j["optima"] = ordered_json::array();
      for (std::size_t e = 0; e < specs.size(); ++e) {
        ordered_json opt{{"estimator", specs[e].name()}};
        if (const auto& best = surface.optima[e]) {
          ordered_json psi;
          for (std::size_t a = 0; a < axes.size(); ++a) {
            psi[axes[a].name] = best->psi[a];
          }
          opt["psi"] = psi;
          opt["value"] = best->value;
        } else {
          opt["error"] = error_json(ErrorCode::kNoAdherers, "no grid cell has a defined estimate");
        }
        j["optima"].push_back(opt);
      }
      const auto text = j.dump(2) + "\n";
      write_text(out_dir / "optimum.json", text);
      std::cout << text;
      return kExitOk;
    }

    if (sel->parsed()) {
      const auto panel = load_panel(o, sel_data);
      const auto regime_text = o.pick(sel_regime, "estimate.regime");
      dtr::require(regime_text.has_value(), "--regime is required");
      const auto regime = dtr::parse_regime(*regime_text, panel);
      auto settings = sel_flags.settings(o, panel);
      default_windows(settings, regime, panel);
      settings.baw.augmented = sel_augmented;
      const auto seed = o.seed();
      const auto result = dtr::select_window(panel, regime, settings.baw, seed, settings.nuisance);
      std::ostringstream csv;
      dtr::write_window_csv(csv, result);
      write_text(out_dir / "window_search.csv", csv.str());
      const auto& best = result.best();
      ordered_json j{{"schema_version", kSchemaVersion},
                     {"command", "select-window"},
                     {"regime", dtr::format_regime(regime, panel)},
                     {"seed", seed},
                     {"bootstrap", result.bootstrap_count},
                     {"lambda_bias", result.lambda_bias},
                     {"augmented", result.augmented},
                     {"reference", result.reference},
                     {"window", window_json(best.window)},
                     {"loss", best.loss},
                     {"variance", best.variance},
                     {"bias", best.bias},
                     {"candidates", result.candidates.size()}};
      const auto text = j.dump(2) + "\n";
      write_text(out_dir / "window_search.json", text);
      std::cout << text;
      return kExitOk;
    }

    if (stu->parsed()) {
      dtr::StudyConfig cfg;
      if (!stu_manifest.empty()) {
        const bool other = !stu_dgp.empty() || !stu_sizes.empty() || !stu_reps.empty() || !stu_grid.empty() ||
                           !stu_params.empty() || !stu_flags.estimators.empty() || !g.seed.empty() ||
                           !g.config_path.empty();
        dtr::require(!other, "--manifest cannot be combined with other study settings");
        std::ifstream in(stu_manifest);
        dtr::require(static_cast<bool>(in), "cannot open manifest " + stu_manifest);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        cfg = dtr::parse_manifest(text);
      } else {
        cfg.dgp = dgp_from(o, stu_dgp, stu_noise, stu_params);
        if (const auto s = o.pick(stu_sizes, "study.sizes")) {
          cfg.sample_sizes.clear();
          std::stringstream ss(*s);
          std::string item;
          while (std::getline(ss, item, ',')) {
            const auto v = dtr::parse_number(item);
            dtr::require(v && *v >= 1 && *v == std::floor(*v), "sample sizes must be positive integers");
            cfg.sample_sizes.push_back(static_cast<std::size_t>(*v));
          }
        }
        cfg.replications = o.count(stu_reps, "study.replications").value_or(cfg.replications);
        if (const auto gtext = o.pick(stu_grid, "surface.grid")) {
          cfg.grid = dtr::parse_grid(*gtext);
        }
        if (const auto e = o.pick(stu_flags.estimators, "estimate.estimators")) {
          cfg.estimators = dtr::parse_estimators(*e);
        }
        const auto defaults = dtr::default_gaw(cfg.dgp.kind);
        cfg.gaw.c = o.number(stu_flags.c, "gaw.c").value_or(defaults.c);
        cfg.gaw.k = o.number(stu_flags.k, "gaw.k").value_or(defaults.k);
        if (const auto t = o.pick(stu_tuning, "gaw.tuning")) {
          cfg.gaw_tuning = dtr::parse_gaw_tuning(*t);
        }
        cfg.gaw_m = o.number(stu_m, "gaw.m").value_or(cfg.gaw_m);
        if (const auto w = o.pick(stu_flags.windows, "baw.windows")) {
          cfg.baw.axes = dtr::parse_window_axes(*w);
        }
        cfg.baw.bootstrap_count = o.count(stu_flags.bootstrap, "baw.bootstrap").value_or(cfg.baw.bootstrap_count);
        cfg.baw.lambda_bias = o.number(stu_flags.lambda, "baw.lambda").value_or(cfg.baw.lambda_bias);
        cfg.baw.refit = o.flag(stu_flags.refit, "baw.refit");
        cfg.baw.q = o.number(stu_flags.q, "baw.q");
        cfg.truth_mc = o.count(stu_truth, "study.truth_mc").value_or(cfg.truth_mc);
        cfg.external_n = o.count(stu_ext, "study.external_n").value_or(cfg.external_n);
        cfg.coverage_bootstrap = o.count(stu_cov, "study.coverage_bootstrap").value_or(cfg.coverage_bootstrap);
        cfg.seed = o.seed();
        cfg.threads = o.threads();
      }
      const auto resolved = cfg.resolved();
      const auto result = dtr::run_study(resolved);
      dtr::write_study(out_dir, resolved, result);
      std::size_t failed = 0;
      for (const auto& r : result.log) {
        failed += r.status == "ok" ? 0 : 1;
      }
      ordered_json j{{"schema_version", kSchemaVersion}, {"command", "study"}, {"out_dir", out_dir.string()},
                     {"seed", resolved.seed}, {"replicates", result.log.size()}, {"failed_replicates", failed}};
      std::cout << j.dump(2) << '\n';
      return kExitOk;
    }
  } catch (const dtr::Error& e) {
    ordered_json j{{"schema_version", kSchemaVersion}, {"error", error_json(e.code(), e.what())}};
    std::cout << j.dump(2) << '\n';
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
