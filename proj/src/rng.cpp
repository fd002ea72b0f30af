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

#include "pivotkit/rng.hpp"

#include "pivotkit/common.hpp"

namespace pivotkit {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::stream(std::uint64_t seed, std::string_view name, std::uint64_t i,
                std::uint64_t j) {
  std::uint64_t s = mix64(seed);
  s = mix64(s ^ hash_name(name));
  s = mix64(s ^ mix64(i + 1));
  s = mix64(s ^ mix64(j + 0x51ed27ULL));
  return Rng(s);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error("Rng::below: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is kept away from zero.
  const double u1 = (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kImage: return "image";
    case Modality::kAudio: return "audio";
    case Modality::kText: return "text";
  }
  return "unknown";
}

Modality parse_modality(const std::string& name) {
  if (name == "image") return Modality::kImage;
  if (name == "audio") return Modality::kAudio;
  if (name == "text") return Modality::kText;
  throw Error("unknown modality '" + name + "'");
}

const char* stage_name(StageKind s) {
  switch (s) {
    case StageKind::kVT: return "VT";
    case StageKind::kVA: return "VA";
    case StageKind::kAT: return "AT";
    case StageKind::kCLF: return "CLF";
  }
  return "unknown";
}

StageKind parse_stage(const std::string& name) {
  if (name == "VT" || name == "vt") return StageKind::kVT;
  if (name == "VA" || name == "va") return StageKind::kVA;
  if (name == "AT" || name == "at") return StageKind::kAT;
  if (name == "CLF" || name == "clf") return StageKind::kCLF;
  throw Error("unknown stage '" + name + "'");
}

}  // namespace pivotkit
