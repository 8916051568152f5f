#include "dtr/simgen.hpp"

#include <algorithm>
#include <cmath>

#include "dtr/error.hpp"
#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace dtr {

std::string_view to_string(DgpKind kind) noexcept { return kind == DgpKind::kSim1 ? "sim1" : "sim2"; }

DgpKind parse_dgp_kind(std::string_view name) {
  if (name == "sim1") {
    return DgpKind::kSim1;
  }
  if (name == "sim2") {
    return DgpKind::kSim2;
  }
  fail(ErrorCode::kInvalidArgument, "unknown generator '" + std::string(name) + "' (expected sim1 or sim2)");
}

const std::vector<std::pair<std::string, double>>& DgpSpec::defaults(DgpKind kind) {
  static const std::vector<std::pair<std::string, double>> sim1 = {
      {"x1_mean", 450.0},      {"x1_sd", 150.0},       {"a1_intercept", 2.0},  {"a1_slope", -0.006},
      {"x2_slope", 1.25},      {"x2_sd", 60.0},        {"a2_intercept", 0.8},  {"a2_slope", -0.004},
      {"y_intercept", 400.0},  {"y_slope", 1.6},       {"y_sd", 60.0},         {"blip1_center", 350.0},
      {"blip2_slope", 2.0},    {"blip2_center", 900.0},
  };
  static const std::vector<std::pair<std::string, double>> sim2 = {
      {"x1_mean", 450.0},   {"x1_sd", 150.0},   {"x2_mean", 50.0},    {"x2_sd", 20.0},
      {"a_intercept", -4.5}, {"a_x1", 0.005},   {"a_x2", 0.02},       {"y_sd", 20.0},
      {"tau_height", 100.0}, {"tau_center", 350.0}, {"tau_width", 75.0}, {"tau_shift", 30.0},
  };
  return kind == DgpKind::kSim1 ? sim1 : sim2;
}

double DgpSpec::param(const std::string& name) const {
  for (const auto& [key, value] : defaults(kind)) {
    if (key == name) {
      const auto it = overrides.find(name);
      return it == overrides.end() ? value : it->second;
    }
  }
  fail(ErrorCode::kInvalidArgument, "generator " + std::string(to_string(kind)) + " has no parameter '" + name + "'");
}

double DgpSpec::sd(const std::string& name) const {
  const double v = param(name);
  return noise == NoiseScale::kStandardDeviation ? v : std::sqrt(v);
}

void DgpSpec::validate() const {
  for (const auto& [key, value] : overrides) {
    (void)param(key);
    require(std::isfinite(value), "generator parameter '" + key + "' must be finite");
  }
  for (const auto& [key, value] : defaults(kind)) {
    if (key.ends_with("_sd")) {
      require(param(key) > 0.0, "generator parameter '" + key + "' must be positive");
    }
  }
  if (kind == DgpKind::kSim2) {
    require(param("tau_width") != 0.0, "tau_width must be non-zero");
  }
}

namespace {

// Draws shared by every policy: covariates and outcome noise, in a fixed
// order per individual. Observational treatment uniforms are drawn only by
// generate(), after the covariate they depend on.
struct Sim1Params {
  double x1_mean, x1_sd, a1_int, a1_slope, x2_slope, x2_sd, a2_int, a2_slope, y_int, y_slope, y_sd, c1, b2, c2;

  explicit Sim1Params(const DgpSpec& s)
      : x1_mean(s.param("x1_mean")), x1_sd(s.sd("x1_sd")), a1_int(s.param("a1_intercept")),
        a1_slope(s.param("a1_slope")), x2_slope(s.param("x2_slope")), x2_sd(s.sd("x2_sd")),
        a2_int(s.param("a2_intercept")), a2_slope(s.param("a2_slope")), y_int(s.param("y_intercept")),
        y_slope(s.param("y_slope")), y_sd(s.sd("y_sd")), c1(s.param("blip1_center")), b2(s.param("blip2_slope")),
        c2(s.param("blip2_center")) {}

  [[nodiscard]] double outcome(double x1, double x2, int a1, int a2, double noise) const {
    return y_int + y_slope * x1 + y_sd * noise - a1 * (x1 - c1) - a2 * (b2 * x2 - c2);
  }
};

struct Sim2Params {
  double x1_mean, x1_sd, x2_mean, x2_sd, a_int, a_x1, a_x2, y_sd, height, center, width, shift;

  explicit Sim2Params(const DgpSpec& s)
      : x1_mean(s.param("x1_mean")), x1_sd(s.sd("x1_sd")), x2_mean(s.param("x2_mean")), x2_sd(s.sd("x2_sd")),
        a_int(s.param("a_intercept")), a_x1(s.param("a_x1")), a_x2(s.param("a_x2")), y_sd(s.sd("y_sd")),
        height(s.param("tau_height")), center(s.param("tau_center")), width(s.param("tau_width")),
        shift(s.param("tau_shift")) {}

  [[nodiscard]] double tau(double x1) const {
    const double z = (x1 - center) / width;
    return height * std::exp(-z * z) - shift;
  }
  [[nodiscard]] double outcome(double x1, double x2, int a, double noise) const {
    return x1 + 2.0 * x2 + tau(x1) * a + y_sd * noise;
  }
};

// Covariates and standardized outcome noise of n individuals.
struct Draws {
  std::vector<double> x1, x2, noise;
};

Draws draw_covariates(const DgpSpec& spec, std::size_t n, std::uint64_t seed) {
  Draws d;
  d.x1.resize(n);
  d.x2.resize(n);
  d.noise.resize(n);
  Rng rng(derive_seed(seed, {0x726f6c6c}));
  if (spec.kind == DgpKind::kSim1) {
    const Sim1Params p(spec);
    for (std::size_t i = 0; i < n; ++i) {
      d.x1[i] = rng.normal(p.x1_mean, p.x1_sd);
      d.x2[i] = rng.normal(p.x2_slope * d.x1[i], p.x2_sd);
      d.noise[i] = rng.normal();
    }
  } else {
    const Sim2Params p(spec);
    for (std::size_t i = 0; i < n; ++i) {
      d.x1[i] = rng.normal(p.x1_mean, p.x1_sd);
      d.x2[i] = rng.normal(p.x2_mean, p.x2_sd);
      d.noise[i] = rng.normal();
    }
  }
  return d;
}

struct PolicyOutcome {
  double y;
  bool match;
};

struct Model {
  std::optional<Sim1Params> sim1;
  std::optional<Sim2Params> sim2;

  explicit Model(const DgpSpec& spec) {
    if (spec.kind == DgpKind::kSim1) {
      sim1.emplace(spec);
    } else {
      sim2.emplace(spec);
    }
  }
};

PolicyOutcome apply_policy(const Model& model, const Draws& d, std::size_t i, const Regime& policy,
                           const Regime* reference) {
  if (model.sim1) {
    const auto& p = *model.sim1;
    const double r1[1] = {d.x1[i]};
    const double r2[1] = {d.x2[i]};
    const int a1 = policy.recommend(0, r1);
    const int a2 = policy.recommend(1, r2);
    const bool match = reference == nullptr || (reference->recommend(0, r1) == a1 && reference->recommend(1, r2) == a2);
    return {p.outcome(d.x1[i], d.x2[i], a1, a2, d.noise[i]), match};
  }
  const auto& p = *model.sim2;
  const double r[2] = {d.x1[i], d.x2[i]};
  const int a = policy.recommend(0, r);
  const bool match = reference == nullptr || reference->recommend(0, r) == a;
  return {p.outcome(d.x1[i], d.x2[i], a, d.noise[i]), match};
}

void check_policy(const DgpSpec& spec, const Regime& policy) {
  require(policy.stage_count() == spec.stage_count(), "policy stage count does not match the generator");
  const std::size_t width = spec.kind == DgpKind::kSim1 ? 1 : 2;
  for (std::size_t t = 0; t < policy.stage_count(); ++t) {
    for (const auto& c : policy.clauses(t)) {
      require(c.covariate < width, "policy refers to a covariate the generator does not have");
    }
  }
  require(policy.treat_action() != policy.control_action() &&
              (policy.treat_action() == kTreat || policy.treat_action() == kControl) &&
              (policy.control_action() == kTreat || policy.control_action() == kControl),
          "generator policies must use binary actions");
}

}  // namespace

Panel generate(const DgpSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, "generate needs n >= 1");
  Rng rng(derive_seed(seed, {0x67656e}));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = std::to_string(i + 1);
  }
  if (spec.kind == DgpKind::kSim1) {
    const Sim1Params p(spec);
    StageData s1{{"X1"}, Eigen::MatrixXd(n, 1), std::vector<int>(n)};
    StageData s2{{"X2"}, Eigen::MatrixXd(n, 1), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double x1 = rng.normal(p.x1_mean, p.x1_sd);
      const int a1 = rng.bernoulli(expit(p.a1_int + p.a1_slope * x1)) ? 1 : 0;
      const double x2 = rng.normal(p.x2_slope * x1, p.x2_sd);
      const int a2 = rng.bernoulli(expit(p.a2_int + p.a2_slope * x2)) ? 1 : 0;
      s1.covariates(r, 0) = x1;
      s1.treatment[i] = a1;
      s2.covariates(r, 0) = x2;
      s2.treatment[i] = a2;
      y(r) = p.outcome(x1, x2, a1, a2, rng.normal());
    }
    return Panel({std::move(s1), std::move(s2)}, std::move(y), std::move(ids));
  }
  const Sim2Params p(spec);
  StageData s1{{"X1", "X2"}, Eigen::MatrixXd(n, 2), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double x1 = rng.normal(p.x1_mean, p.x1_sd);
    const double x2 = rng.normal(p.x2_mean, p.x2_sd);
    const int a = rng.bernoulli(expit(p.a_int + p.a_x1 * x1 + p.a_x2 * x2)) ? 1 : 0;
    s1.covariates(r, 0) = x1;
    s1.covariates(r, 1) = x2;
    s1.treatment[i] = a;
    y(r) = p.outcome(x1, x2, a, rng.normal());
  }
  return Panel({std::move(s1)}, std::move(y), std::move(ids));
}

RolloutResult rollout(const DgpSpec& spec, const Regime& policy, std::size_t n, std::uint64_t seed,
                      const Regime* reference) {
  spec.validate();
  require(n >= 2, "rollout needs at least two trajectories");
  check_policy(spec, policy);
  if (reference != nullptr) {
    check_policy(spec, *reference);
  }
  const auto draws = draw_covariates(spec, n, seed);
  const Model model(spec);
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t matches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto out = apply_policy(model, draws, i, policy, reference);
    const double delta = out.y - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (out.y - mean);
    matches += out.match ? 1 : 0;
  }
  RolloutResult r;
  r.mean = mean;
  r.count = n;
  r.standard_error = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  if (reference != nullptr) {
    r.match_fraction = static_cast<double>(matches) / static_cast<double>(n);
  }
  return r;
}

RolloutResult oracle_value(const DgpSpec& spec, const Regime& regime, std::size_t n_mc, std::uint64_t seed) {
  require(n_mc >= 10000, "oracle_value needs at least 10^4 trajectories");
  return rollout(spec, regime, n_mc, seed);
}

std::vector<double> true_value_surface(const DgpSpec& spec, const Regime& base,
                                       const std::vector<std::vector<double>>& cells, std::size_t n_mc,
                                       std::uint64_t seed, unsigned threads) {
  spec.validate();
  check_policy(spec, base);
  require(n_mc >= 2, "true_value_surface needs at least two trajectories");
  const auto draws = draw_covariates(spec, n_mc, seed);
  const Model model(spec);
  std::vector<double> values(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t c) {
    const Regime policy = base.with_thresholds(cells[c]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
      sum += apply_policy(model, draws, i, policy, nullptr).y;
    }
    values[c] = sum / static_cast<double>(n_mc);
  });
  return values;
}

Regime default_regime(DgpKind kind) {
  if (kind == DgpKind::kSim1) {
    return Regime({{Clause{0, 350.0, Direction::kLessEqual}}, {Clause{0, 450.0, Direction::kLessEqual}}});
  }
  return Regime({{Clause{0, 430.0, Direction::kLessEqual}, Clause{1, 80.0, Direction::kLessEqual}}});
}

std::vector<GridAxis> default_grid(DgpKind kind) {
  if (kind == DgpKind::kSim1) {
    return {{"psi1", grid_values(150.0, 500.0, 5.0)}, {"psi2", grid_values(200.0, 600.0, 5.0)}};
  }
  return {{"psi1", grid_values(200.0, 600.0, 5.0)}, {"psi2", grid_values(40.0, 80.0, 1.0)}};
}

std::vector<WindowAxis> default_window_axes(DgpKind kind) {
  const std::vector<double> wide{0.0, 2.0, 4.0, 6.0, 8.0, 10.0};
  if (kind == DgpKind::kSim1) {
    return {{0, 0, WindowSide::kBoth, wide}, {1, 0, WindowSide::kBoth, wide}};
  }
  return {{0, 0, WindowSide::kBoth, wide}, {0, 1, WindowSide::kBoth, {0.0, 1.0, 2.0}}};
}

GawConfig default_gaw(DgpKind kind) { return kind == DgpKind::kSim1 ? GawConfig{0.18, 0.5} : GawConfig{1.0, 0.5}; }

NuisanceSpecs default_nuisance(const DgpSpec& spec, const Panel& panel) {
  NuisanceSpecs specs;
  for (std::size_t t = 0; t < panel.stage_count(); ++t) {
    specs.propensity.push_back(default_propensity_spec(panel, t));
  }
  if (spec.kind == DgpKind::kSim1) {
    for (std::size_t t = 0; t < panel.stage_count(); ++t) {
      specs.outcome.push_back(default_outcome_spec(panel, t));
    }
  } else {
    specs.outcome.push_back(FeatureSpec({Term::intercept(), Term::covariate(0, 0), Term::covariate(0, 1),
                                         Term::treatment(0), Term::treatment_times(0, 0, 0),
                                         Term::treatment_times(0, 0, 0, 2)}));
  }
  return specs;
}

}  // namespace dtr
