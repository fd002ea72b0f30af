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

#include <filesystem>
#include <string>

#include "pivotkit/dataset.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit::testing {

inline WorldConfig tiny_world_config(std::uint64_t seed = 3) {
  WorldConfig c;
  c.num_classes = 4;
  c.vt_size = 96;
  c.va_size = 96;
  c.at_gold_size = 32;
  c.eval_size = 32;
  c.seed = seed;
  return c;
}

inline const World& tiny_world() {
  static const World w = generate_world(tiny_world_config());
  return w;
}

inline TowerShape tiny_shape() {
  TowerShape s;
  s.width = 32;
  s.layers = 2;
  s.heads = 2;
  s.embed_dim = 16;
  return s;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pivotkit-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline bool same_params(const Encoder& a, const Encoder& b) {
  return a.params().size() == b.params().size() &&
         std::equal(a.params().begin(), a.params().end(), b.params().begin());
}

}  // namespace pivotkit::testing
