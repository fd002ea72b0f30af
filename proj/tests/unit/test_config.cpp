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

#include <cstdlib>

#include "doctest.h"
#include "pivotkit/config.hpp"

using namespace pivotkit;

TEST_CASE("key-value parsing") {
  const auto kv = KeyValueConfig::parse("# desk\nepochs = 3\n  lr_weights=2e-4  # inline\n\nmilestones = 4, 8\n");
  CHECK(kv.get_int("epochs", 0) == 3);
  CHECK(kv.get_double("lr_weights", 0) == doctest::Approx(2e-4));
  CHECK(kv.get_int_list("milestones", {}) == std::vector<int>{4, 8});
  CHECK(kv.get_int("missing", 7) == 7);
  CHECK(kv.canonical() == "epochs = 3\nlr_weights = 2e-4\nmilestones = 4, 8\n");

  CHECK_THROWS_AS(KeyValueConfig::parse("epochs 3"), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("Epochs = 3"), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2"), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("epochs = three").get_int("epochs", 0), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("augment = maybe").get_bool("augment", true), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("epochz = 1").require_known(all_config_keys()), Error);
}

TEST_CASE("environment overrides and stage prefixes") {
  auto kv = KeyValueConfig::parse("epochs = 3\nva_epochs = 5\n");
  ::setenv("PIVOTKIT_AT_EPOCHS", "7", 1);
  kv.apply_env(all_config_keys());
  ::unsetenv("PIVOTKIT_AT_EPOCHS");
  CHECK(stage_config_from(scoped_stage_config(kv, StageKind::kVT), StageKind::kVT, 0).epochs == 3);
  CHECK(stage_config_from(scoped_stage_config(kv, StageKind::kVA), StageKind::kVA, 0).epochs == 5);
  CHECK(stage_config_from(scoped_stage_config(kv, StageKind::kAT), StageKind::kAT, 0).epochs == 7);
}

TEST_CASE("stage presets respect the freeze contracts") {
  const KeyValueConfig none;
  const StageConfig va = stage_config_from(none, StageKind::kVA, 1);
  CHECK(va.freeze_image);
  CHECK(va.batch_size == 64);
  CHECK(va.optimizer.kind == OptimizerKind::kAdam);
  const StageConfig at = stage_config_from(none, StageKind::kAT, 1);
  CHECK((at.freeze_image && at.freeze_text));
  CHECK_FALSE(stage_config_from(KeyValueConfig::parse("bibi = true"), StageKind::kVA, 1).freeze_image);
  CHECK_THROWS_AS(stage_config_from(KeyValueConfig::parse("freeze_image = false"), StageKind::kVA, 1), Error);
  CHECK_THROWS_AS(stage_config_from(KeyValueConfig::parse("optimizer = lbfgs"), StageKind::kVT, 1), Error);
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
