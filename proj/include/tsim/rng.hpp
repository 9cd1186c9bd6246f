#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace tsim {

// splitmix64 step. All project randomness bottoms out here so that streams
// are reproducible across platforms and independent of std library details.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Child seed from a parent seed and a stream tag. Chain calls to key streams
// by (update, world, agent, ...) tuples.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t s = seed ^ (tag * 0xd1342543de82ef95ULL + 0x632be59bd9b4e019ULL);
  return splitmix64(s);
}

template <typename... Tags>
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return derive_seed(derive_seed(seed, tag), rest...);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; no spare caching so the stream position is call-count stable.
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Integer in [0, n). n is tiny everywhere this is used, so modulo bias is
  // far below anything observable; determinism is what matters.
  int uniform_int(int n) { return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

template <typename T>
void fisher_yates(std::vector<T>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(v[i], v[j]);
  }
}

}  // namespace tsim
