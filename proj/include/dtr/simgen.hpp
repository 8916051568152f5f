#ifndef DTR_SIMGEN_HPP
#define DTR_SIMGEN_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dtr/baw_select.hpp"
#include "dtr/panel.hpp"
#include "dtr/regime.hpp"
#include "dtr/surface.hpp"
#include "dtr/weighting.hpp"

namespace dtr {

enum class DgpKind { kSim1, kSim2 };

std::string_view to_string(DgpKind kind) noexcept;
DgpKind parse_dgp_kind(std::string_view name);

/// How the second argument of N(mu, s) in the generator is read.
enum class NoiseScale { kStandardDeviation, kVariance };

/**
 * Sim1 (two stages, one covariate each):
 *   X1 ~ N(450, 150), A1 ~ Ber(expit(2 - 0.006 X1)),
 *   X2 ~ N(1.25 X1, 60), A2 ~ Ber(expit(0.8 - 0.004 X2)),
 *   Y = N(400 + 1.6 X1, 60) - A1 (X1 - 350) - A2 (2 X2 - 900).
 * Sim2 (one stage, two covariates):
 *   X1 ~ N(450, 150), X2 ~ N(50, 20), A ~ Ber(expit(-4.5 + 0.005 X1 + 0.02 X2)),
 *   Y ~ N(X1 + 2 X2 + tau(X1) A, 20), tau(x) = 100 exp(-((x - 350) / 75)^2) - 30.
 * Every constant is a named parameter that `overrides` may replace.
 */
struct DgpSpec {
  DgpKind kind = DgpKind::kSim1;
  NoiseScale noise = NoiseScale::kStandardDeviation;
  std::map<std::string, double> overrides;

  static const std::vector<std::pair<std::string, double>>& defaults(DgpKind kind);

  [[nodiscard]] double param(const std::string& name) const;
  /// Standard deviation for a noise parameter, honoring `noise`.
  [[nodiscard]] double sd(const std::string& name) const;
  [[nodiscard]] std::size_t stage_count() const { return kind == DgpKind::kSim1 ? 2 : 1; }
  void validate() const;
};

/// Observational panel of n individuals from substream `seed`.
Panel generate(const DgpSpec& spec, std::size_t n, std::uint64_t seed);

struct RolloutResult {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t count = 0;
  std::optional<double> match_fraction;  // set when a reference regime is given
};

/**
 * Simulates n trajectories with treatment assigned by `policy` at every
 * stage. With `reference`, also reports the fraction of individuals for
 * whom the reference rule would have made the same choice at every stage.
 * Covariates are drawn identically for every policy given the seed.
 */
RolloutResult rollout(const DgpSpec& spec, const Regime& policy, std::size_t n, std::uint64_t seed,
                      const Regime* reference = nullptr);

/// Monte Carlo value of `regime`; n_mc must be at least 10^4.
RolloutResult oracle_value(const DgpSpec& spec, const Regime& regime, std::size_t n_mc, std::uint64_t seed);

/// Values of base.with_thresholds(cell) for every cell, all from the same
/// covariate draws so cell differences carry little Monte Carlo noise.
std::vector<double> true_value_surface(const DgpSpec& spec, const Regime& base,
                                       const std::vector<std::vector<double>>& cells, std::size_t n_mc,
                                       std::uint64_t seed, unsigned threads = 1);

/// Treat if X <= psi at each stage (Sim1), or if X1 <= psi1 and X2 <= psi2 (Sim2),
/// at the true optimum thresholds.
Regime default_regime(DgpKind kind);
std::vector<GridAxis> default_grid(DgpKind kind);
std::vector<WindowAxis> default_window_axes(DgpKind kind);
GawConfig default_gaw(DgpKind kind);

/// Correctly specified nuisance models for the generator.
NuisanceSpecs default_nuisance(const DgpSpec& spec, const Panel& panel);

}  // namespace dtr

#endif  // DTR_SIMGEN_HPP
