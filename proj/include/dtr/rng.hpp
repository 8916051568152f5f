#ifndef DTR_RNG_HPP
#define DTR_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dtr {

/// Mixes a root seed with a list of stream keys (replicate index, bootstrap
/// index, purpose tag, ...) into an independent 64-bit seed. Two different key
/// paths give unrelated streams, so parallel schedules never share state.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) noexcept;

/**
 * Portable random stream.
 *
 * The integer engine is std::mt19937_64, whose output sequence is fixed by the
 * standard. Every derived variate is computed here from raw 64-bit draws
 * instead of through the implementation-defined <random> distributions:
 *
 *  - uniform():  top 53 bits scaled by 2^-53, in [0, 1);
 *  - index(n):   Lemire multiply-shift with rejection, unbiased on [0, n);
 *  - normal():   Box-Muller cosine branch, one normal per two uniforms,
 *                no cached second variate.
 *
 * A given seed therefore yields the same values on every conforming platform
 * (up to libm rounding of log/cos/sqrt).
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  std::uint64_t index(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dtr

#endif  // DTR_RNG_HPP
