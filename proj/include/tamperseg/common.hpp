#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tamperseg {

// ---------------------------------------------------------------------------
// Error types. Operations with a spec'd failure mode throw one of these so
// callers (and tests) can discriminate.
// ---------------------------------------------------------------------------

struct missing_object_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct seg_missing_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct capacity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct missing_sample_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. SplitMix64 core; identical stream on every platform,
// unlike the std <random> distributions. All randomness in the project goes
// through this.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive. Modulo bias is irrelevant for the
  // small ranges used here.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Standard normal via Box-Muller (no caching, two draws per call, so the
  // stream position is a pure function of call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Derive an independent stream for a sub-task.
  Rng fork(uint64_t salt) { return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL)); }

 private:
  uint64_t state_;
};

// Stable seed derivation: mixes a base seed with a tag so corpora, model init
// and batch order draw from unrelated streams.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
  Rng r(base ^ (0xa0761d6478bd642fULL * (tag + 1)));
  return r.next_u64();
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit hash, for corpus / vocab / manifest fingerprints.
// ---------------------------------------------------------------------------

inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(uint64_t v);

}  // namespace tamperseg
