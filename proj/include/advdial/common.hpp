#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace advdial {

// All recoverable failures are thrown as Error with a stable message prefix
// (e.g. "TokenOutOfVocab", "ParseError(17)") that callers and tests match on.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic RNG. Wraps mt19937_64 but derives doubles from raw bits so
// streams are reproducible independent of the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform index in [0, n)
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw Error("EmptyRange");
    std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

 private:
  std::mt19937_64 gen_;
};

// splitmix64 finalizer, used for seed derivation and value mixing
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable per-component seed from a base seed plus context indices, so e.g.
// rollout (step, example, t, i) gets the same stream no matter the execution
// order of the surrounding loop.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

// FNV-1a 64-bit; used for config and artifact content hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

std::string to_hex(std::uint64_t v);

// Draw an index from an explicit probability vector (CDF scan).
std::size_t sample_categorical(const std::vector<double>& probs, Rng& rng);

// %.17g formatting: round-trips IEEE doubles exactly, so serialized
// checkpoints and configs are bit-stable.
std::string format_double(double v);

// Lower regularized incomplete gamma P(s, x).
double gamma_p(double s, double x);

// Chi-square survival function (1 - CDF) for the given degrees of freedom.
double chi2_sf(double stat, double df);

// Goodness-of-fit p-value; cells with expected count < 5 are pooled.
double chi2_gof_pvalue(const std::vector<double>& observed,
                       const std::vector<double>& expected);

}  // namespace advdial
