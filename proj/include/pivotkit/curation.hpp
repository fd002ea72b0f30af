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

// Audio-text pair curation: gold captions and labels, captions mined
// through the image tower, random captions, and nested few-shot subsets.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pivotkit/checkpoint.hpp"
#include "pivotkit/rng.hpp"
#include "pivotkit/training.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit {

enum class Provenance : std::uint8_t { kGoldCaption, kGoldLabel, kMined, kRandom };
const char* provenance_name(Provenance p);
Provenance parse_provenance(const std::string& name);

struct AlignmentPair {
  std::string audio_id;
  Tokens caption;
  Provenance provenance = Provenance::kGoldCaption;
  std::optional<double> score;  // cosine, mined pairs only

  bool operator==(const AlignmentPair&) const = default;
};

struct CaptionPool {
  std::vector<Tokens> captions;
  Tokens prompt;  // prepended at encode time

  void validate() const;
};

enum class PoolSource { kInDomain, kTemplate, kShifted };
const char* pool_source_name(PoolSource s);
PoolSource parse_pool_source(const std::string& name);

/// In-domain: every caption of the VT corpus. Template: freshly rendered
/// single-class captions. Shifted: template captions of a world with a
/// different seed, whose images and sounds are unrelated to this one.
CaptionPool build_pool(const World& world, PoolSource source, int per_class, std::uint64_t seed,
                       const std::string& prompt = "a photo of");

/// Unit-norm embeddings of the pool captions (prompt applied).
MatF embed_pool(const Encoder& text, const CaptionPool& pool);

/// For each clip, the top_m pool captions by cosine to the embedding of its
/// evaluation frame. Both towers must be frozen. Deterministic, ties broken
/// by pool index.
std::vector<AlignmentPair> mine_pairs(const std::vector<TriModalRecord>& clips, const Encoder& image,
                                      const Encoder& text, const CaptionPool& pool, int top_m = 1);

/// One uniformly drawn pool caption per audio clip.
std::vector<AlignmentPair> random_pairs(const std::vector<std::string>& audio_ids, const CaptionPool& pool, Rng& rng);

enum class GoldMode { kCaption, kLabel };

/// Gold pairs from the quarantined AT set; `requester` must be the AT stage.
std::vector<AlignmentPair> gold_pairs(const World& world, GoldMode mode, StageKind requester = StageKind::kAT);

/// Nested subsets: the first n items of one seeded permutation, so
/// fewshot_subset(p, n) is a prefix of fewshot_subset(p, m) for n < m.
std::vector<AlignmentPair> fewshot_subset(const std::vector<AlignmentPair>& pairs, std::size_t n, std::uint64_t seed);

/// Drops repeated (audio_id, caption) pairs, keeping the first.
std::vector<AlignmentPair> dedup(const std::vector<AlignmentPair>& pairs);

void write_pairs(const std::filesystem::path& path, const std::vector<AlignmentPair>& pairs);
std::vector<AlignmentPair> read_pairs(const std::filesystem::path& path);

/// Id lookup over the records whose audio a pair file may reference.
class AudioIndex {
 public:
  void add(const std::vector<TriModalRecord>& records, const std::vector<ImageTensor>& features);
  const TriModalRecord& record(const std::string& id) const;
  const ImageTensor& feature(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) > 0; }

 private:
  std::unordered_map<std::string, std::pair<const TriModalRecord*, const ImageTensor*>> index_;
};

/// Fraction of pairs whose caption names exactly the audio's label set.
double class_match_rate(const World& world, const AudioIndex& audio, const std::vector<AlignmentPair>& pairs);

/// AT stage views over `pairs`; frames are attached when available.
StageData at_stage_data(const std::vector<AlignmentPair>& pairs, const AudioIndex& audio);

}  // namespace pivotkit
