#ifndef FRATMAE_RNG_HPP
#define FRATMAE_RNG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fratmae {

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Deterministic RNG used everywhere instead of global state. The bit engine
// is mt19937_64; all distributions are implemented here so that sequences do
// not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is negligible for the n used here.
  int uniform_int(int n) { return static_cast<int>(eng_() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  // Box-Muller without the cached spare, so every draw consumes exactly two
  // engine outputs and the stream stays position-independent.
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * M_PI * u2);
  }

  // Truncated normal: resample until |z| <= 2, then scale.
  double trunc_normal(double sigma) {
    double z = normal();
    while (std::fabs(z) > 2.0) z = normal();
    return z * sigma;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), ascending. Partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + uniform_int(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  // Engine state round-trips through text exactly (same platform).
  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

  // Independent substream derived from a label; used for per-tensor init.
  static Rng fork(uint64_t seed, const std::string& label) {
    return Rng(fnv1a64(label) ^ (seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace fratmae

#endif
