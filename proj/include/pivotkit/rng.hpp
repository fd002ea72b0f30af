// Copyright 2026 The pivotkit Authors.
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

namespace pivotkit {

/// Seeded generator used everywhere randomness is consumed.
///
/// Streams are derived from a root seed plus a name (and optional indices),
/// so every consumer (data order, frame choice, masking, init, ...) has an
/// independent reproducible sequence. Sampling helpers are written out here
/// instead of using <random> distributions, whose output is not specified
/// bit-for-bit across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::string_view name,
                    std::uint64_t i = 0, std::uint64_t j = 0);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, so no modulo bias.
  std::uint64_t below(std::uint64_t n);

  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t k = below(i);
      std::swap(first[i - 1], first[k]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

/// Seed of the named substream of a root seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) { return mix64(seed ^ hash_name(name)); }

}  // namespace pivotkit
