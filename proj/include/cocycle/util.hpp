#pragma once

// Small deterministic utilities shared across modules: a portable RNG,
// low-discrepancy sequences, and an indexed parallel loop whose results do
// not depend on the worker count.

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace cocycle {

// splitmix64: tiny, well-mixed, identical output on every platform.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG. Streams derived with derive() are independent of
// evaluation order, so per-sample seeding stays reproducible under any
// thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up so that nearby seeds decorrelate immediately.
    splitmix64(state_);
    splitmix64(state_);
  }

  static Rng derive(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (0x632be59bd9b4e019ull * (index + 1));
    return Rng(s);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no cached spare: keeps the stream
  // position a pure function of the call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
};

// Halton low-discrepancy value: index >= 0 in the given prime base.
inline double halton(std::uint64_t index, std::uint64_t base) {
  double f = 1.0;
  double r = 0.0;
  std::uint64_t i = index + 1;  // skip the 0 point
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

inline const std::vector<int>& halton_primes() {
  static const std::vector<int> primes = {2,  3,  5,  7,  11, 13, 17, 19,
                                          23, 29, 31, 37, 41, 43, 47, 53};
  return primes;
}

// Worker count: COCYCLE_LAB_THREADS wins, else hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("COCYCLE_LAB_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1 && v <= 1024) return static_cast<int>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n). Each index writes only its own result slot, so
// output is independent of the worker count and of scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (n + workers - 1) / static_cast<std::size_t>(workers);
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = static_cast<std::size_t>(w) * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn]() {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace cocycle
