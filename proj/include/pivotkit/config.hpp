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

// Plain-text key-value configs:
//
//   # comment
//   epochs = 3
//   lr_weights = 1e-3
//   milestones = 10, 20
//
// Keys are lower-case identifiers. An environment variable
// PIVOTKIT_<KEY> (upper-cased) overrides the file value. Training keys may
// carry a stage prefix (va_epochs = 5), which wins over the bare key for
// that stage, so one file can describe a whole pipeline.

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pivotkit/common.hpp"
#include "pivotkit/dataset.hpp"
#include "pivotkit/training.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Applies PIVOTKIT_<KEY> variables for every key in `known`.
  void apply_env(const std::set<std::string>& known, const char* prefix = "PIVOTKIT_");

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  /// Throws on any key outside `known`.
  void require_known(const std::set<std::string>& known) const;

  /// The entries whose keys are in `keys`.
  KeyValueConfig subset(const std::set<std::string>& keys) const;

  /// Sorted `key = value` lines; hashed into the pipeline manifest.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> values_;
};

const std::set<std::string>& world_config_keys();
const std::set<std::string>& tower_config_keys();
const std::set<std::string>& stage_config_keys();

/// Every key any command understands, stage-prefixed forms included.
const std::set<std::string>& all_config_keys();
/// Bare stage keys resolved for `stage` (prefixed values first).
KeyValueConfig scoped_stage_config(const KeyValueConfig& kv, StageKind stage);

WorldConfig world_config_from(const KeyValueConfig& kv, std::uint64_t seed);
TowerShape tower_shape_from(const KeyValueConfig& kv);
/// Desk defaults per stage, then the config's values on top. `kv` holds
/// bare stage keys (see scoped_stage_config).
StageConfig stage_config_from(const KeyValueConfig& kv, StageKind stage, std::uint64_t seed);

/// Hex SHA-256 of bytes or of a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace pivotkit
