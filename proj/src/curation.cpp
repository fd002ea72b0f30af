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

#include "pivotkit/curation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "pivotkit/parallel.hpp"

namespace pivotkit {

namespace {
using json = nlohmann::json;
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kGoldCaption:
      return "gold-caption";
    case Provenance::kGoldLabel:
      return "gold-label";
    case Provenance::kMined:
      return "mined";
    case Provenance::kRandom:
      return "random";
  }
  return "?";
}

Provenance parse_provenance(const std::string& name) {
  for (Provenance p : {Provenance::kGoldCaption, Provenance::kGoldLabel, Provenance::kMined, Provenance::kRandom})
    if (name == provenance_name(p)) return p;
  throw Error("unknown pair provenance '" + name + "'");
}

void CaptionPool::validate() const {
  if (captions.empty()) throw Error("caption pool is empty");
}

const char* pool_source_name(PoolSource s) {
  switch (s) {
    case PoolSource::kInDomain:
      return "in-domain";
    case PoolSource::kTemplate:
      return "template";
    case PoolSource::kShifted:
      return "shifted";
  }
  return "?";
}

PoolSource parse_pool_source(const std::string& name) {
  for (PoolSource s : {PoolSource::kInDomain, PoolSource::kTemplate, PoolSource::kShifted})
    if (name == pool_source_name(s)) return s;
  throw Error("unknown caption pool source '" + name + "'");
}

CaptionPool build_pool(const World& world, PoolSource source, int per_class, std::uint64_t seed,
                       const std::string& prompt) {
  CaptionPool pool;
  pool.prompt = world.vocab.encode(prompt);
  switch (source) {
    case PoolSource::kInDomain:
      for (const auto& r : world.vt)
        for (const auto& c : r.captions) pool.captions.push_back(c);
      break;
    case PoolSource::kTemplate:
      pool.captions = template_captions(world, per_class, seed);
      break;
    case PoolSource::kShifted: {
      // Same grammar and vocabulary, but words are tied to a different
      // permutation of the classes, so captions describe other sounds.
      std::vector<int> perm(world.config.num_classes);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng = Rng::stream(seed, "shifted-pool");
      rng.shuffle(perm.begin(), perm.end());
      World relabeled;
      relabeled.config = world.config;
      relabeled.vocab = world.vocab;
      for (int c = 0; c < world.config.num_classes; ++c) relabeled.classes.push_back(world.classes[perm[c]]);
      pool.captions = template_captions(relabeled, per_class, seed);
      break;
    }
  }
  pool.validate();
  return pool;
}

MatF embed_pool(const Encoder& text, const CaptionPool& pool) {
  pool.validate();
  std::vector<Tokens> full(pool.captions.size());
  std::vector<EncoderInput> in(full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    full[i] = pool.prompt;
    full[i].insert(full[i].end(), pool.captions[i].begin(), pool.captions[i].end());
    in[i] = EncoderInput::of(std::span<const int>(full[i]));
  }
  return embed_all(text, std::span<const EncoderInput>(in));
}

std::vector<AlignmentPair> mine_pairs(const std::vector<TriModalRecord>& clips, const Encoder& image,
                                      const Encoder& text, const CaptionPool& pool, int top_m) {
  if (!image.frozen() || !text.frozen()) throw Error("mine_pairs: image and text encoders must be frozen");
  pool.validate();
  const int m = static_cast<int>(pool.captions.size());
  if (top_m < 1 || top_m > m) throw Error("mine_pairs: top_m must lie in [1, pool size]");
  const MatF P = embed_pool(text, pool);
  std::vector<std::vector<AlignmentPair>> per_clip(clips.size());
  parallel_for(static_cast<int>(clips.size()), [&](int i) {
    const TriModalRecord& r = clips[i];
    if (!r.has_frames() || !r.has_audio()) throw Error("mine_pairs: clip " + r.id + " needs frames and audio");
    const RowVec<float> e = image.encode(r.eval_frame());
    const VecF s = P * e.transpose();
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + top_m, idx.end(),
                      [&](int a, int b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    for (int k = 0; k < top_m; ++k)
      per_clip[i].push_back({r.id, pool.captions[idx[k]], Provenance::kMined, static_cast<double>(s[idx[k]])});
  });
  std::vector<AlignmentPair> out;
  for (auto& v : per_clip)
    for (auto& p : v) out.push_back(std::move(p));
  return out;
}

std::vector<AlignmentPair> random_pairs(const std::vector<std::string>& audio_ids, const CaptionPool& pool, Rng& rng) {
  pool.validate();
  std::vector<AlignmentPair> out;
  out.reserve(audio_ids.size());
  for (const auto& id : audio_ids)
    out.push_back({id, pool.captions[rng.below(pool.captions.size())], Provenance::kRandom, std::nullopt});
  return out;
}

std::vector<AlignmentPair> gold_pairs(const World& world, GoldMode mode, StageKind requester) {
  const auto& gold = world.at_gold(requester);
  std::vector<AlignmentPair> out;
  for (const auto& r : gold) {
    if (mode == GoldMode::kCaption) {
      for (const auto& c : r.captions) out.push_back({r.id, c, Provenance::kGoldCaption, std::nullopt});
    } else {
      Tokens t;
      for (std::size_t k = 0; k < r.labels.size(); ++k) {
        if (k) t.push_back(world.vocab.id("and"));
        const Tokens name = world.label_tokens(r.labels[k]);
        t.insert(t.end(), name.begin(), name.end());
      }
      out.push_back({r.id, t, Provenance::kGoldLabel, std::nullopt});
    }
  }
  return out;
}

std::vector<AlignmentPair> fewshot_subset(const std::vector<AlignmentPair>& pairs, std::size_t n, std::uint64_t seed) {
  if (n > pairs.size())
    throw Error("fewshot_subset: asked for " + std::to_string(n) + " of " + std::to_string(pairs.size()) + " pairs");
  std::vector<std::size_t> perm(pairs.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng::stream(seed, "fewshot");
  rng.shuffle(perm.begin(), perm.end());
  std::vector<AlignmentPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pairs[perm[i]]);
  return out;
}

std::vector<AlignmentPair> dedup(const std::vector<AlignmentPair>& pairs) {
  std::set<std::pair<std::string, Tokens>> seen;
  std::vector<AlignmentPair> out;
  for (const auto& p : pairs)
    if (seen.emplace(p.audio_id, p.caption).second) out.push_back(p);
  return out;
}

void AudioIndex::add(const std::vector<TriModalRecord>& records, const std::vector<ImageTensor>& features) {
  if (records.size() != features.size()) throw Error("audio index: records and features differ in count");
  for (std::size_t i = 0; i < records.size(); ++i) index_[records[i].id] = {&records[i], &features[i]};
}

const TriModalRecord& AudioIndex::record(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("pair references unknown audio '" + id + "'");
  return *it->second.first;
}

const ImageTensor& AudioIndex::feature(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("pair references unknown audio '" + id + "'");
  return *it->second.second;
}

double class_match_rate(const World& world, const AudioIndex& audio, const std::vector<AlignmentPair>& pairs) {
  if (pairs.empty()) return 0.0;
  int hits = 0;
  for (const auto& p : pairs) hits += caption_classes(world, p.caption) == audio.record(p.audio_id).labels;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

StageData at_stage_data(const std::vector<AlignmentPair>& pairs, const AudioIndex& audio) {
  StageData d;
  bool frames = true;
  for (const auto& p : pairs) {
    const TriModalRecord& r = audio.record(p.audio_id);
    d.at_audio.push_back(&audio.feature(p.audio_id));
    d.at_captions.push_back(&p.caption);
    frames = frames && r.has_frames();
    d.at_frames.push_back(&r.frames);
  }
  if (!frames) d.at_frames.clear();
  return d;
}

void write_pairs(const std::filesystem::path& path, const std::vector<AlignmentPair>& pairs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  for (const auto& p : pairs) {
    json j = {{"audio_id", p.audio_id}, {"caption", p.caption}, {"provenance", provenance_name(p.provenance)}};
    if (p.score) j["score"] = *p.score;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed to write pair file " + path.string());
}

std::vector<AlignmentPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open pair file " + path.string());
  std::vector<AlignmentPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      AlignmentPair p;
      p.audio_id = j.at("audio_id");
      p.caption = j.at("caption").get<Tokens>();
      p.provenance = parse_provenance(j.at("provenance"));
      if (j.contains("score")) p.score = j["score"].get<double>();
      if (p.provenance == Provenance::kMined && !p.score) throw Error("mined pair without a score");
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pivotkit
