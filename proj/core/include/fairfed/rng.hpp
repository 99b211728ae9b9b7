// Copyright 2026 The fairfed authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fairfed {

// All randomness in a run flows from one manifest seed through named
// substreams (data/sampling/init/noise/...), so fixing the seed fixes every
// draw. Samplers are hand-rolled on top of mt19937_64 instead of the
// std::*_distribution adaptors, whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = -n % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t v = engine_();
      if (v >= threshold) return v % n;
    }
  }

  // Box-Muller. The spare is cached, so draws come in deterministic pairs.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * radius * std::cos(angle);
  }

  // Zero-mean Laplace with scale parameter b (variance 2b^2), inverse CDF.
  double laplace(double scale) {
    const double u = uniform() - 0.5;
    const double mag = std::log(1.0 - 2.0 * std::abs(u));
    return u < 0.0 ? scale * mag : -scale * mag;
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

  // Uniform sample of k indices from [0, n) without replacement.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n,
                                                                std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  // Partial Fisher-Yates: the first k slots end up uniform without replacement.
  for (std::size_t i = 0; i < k && i < n; ++i) {
    std::swap(pool[i], pool[i + below(n - i)]);
  }
  pool.resize(k < n ? k : n);
  return pool;
}

// FNV-1a over bytes; the workhorse for substream derivation and content
// fingerprints. Stable across platforms and builds.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  return fnv1a(h, s.data(), s.size());
}

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  return fnv1a(h, &v, sizeof(v));
}

// splitmix64 finalizer; decorrelates the FNV lanes before seeding mt19937_64.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name,
                                    std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a(h, master);
  h = fnv1a(h, name);
  h = fnv1a(h, a);
  h = fnv1a(h, b);
  return mix64(h);
}

inline Rng substream(std::uint64_t master, std::string_view name,
                     std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(substream_seed(master, name, a, b));
}

}  // namespace fairfed
