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

// The pivotkit command line. Each subcommand writes one output directory
// holding its artifacts and a stage.json provenance record:
//
//   gen-world          synthetic world
//   pretrain-vt        image-text towers
//   pretrain-va        audio tower against the frozen image tower
//   curate             audio-caption pairs (gold, mined, random)
//   finetune-at        audio tower on curated pairs
//   eval-retrieval     R@1/R@10 for the VT, VA and AT pairs
//   eval-zeroshot      prompted zero-shot accuracy
//   eval-map           multi-label mAP
//   probe-pivotability per-audio pivotability and a category summary
//   fit-scaling        metric vs log2(pairs) line and extrapolation
//   report             CSV tables plus a JSON index
//
// Exit codes: 0 success, 1 failed contract, 2 usage error.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pivotkit {

/// `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pivotkit
