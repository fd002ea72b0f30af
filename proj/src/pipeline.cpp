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

#include "pivotkit/pipeline.hpp"

#include <algorithm>

#include "pivotkit/parallel.hpp"

namespace pivotkit {

namespace {

void require_tower(const std::optional<Encoder>& e, const char* name) {
  if (!e) throw Error(std::string("model has no ") + name + " tower");
}

// Items sharing at least one label with each record.
std::vector<std::vector<int>> label_gold(const std::vector<TriModalRecord>& records) {
  std::vector<std::vector<int>> g(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = 0; j < records.size(); ++j) {
      const auto& a = records[i].labels;
      const auto& b = records[j].labels;
      if (std::find_first_of(a.begin(), a.end(), b.begin(), b.end()) != a.end()) g[i].push_back(static_cast<int>(j));
    }
  return g;
}

}  // namespace

MatF embed_audio(const Encoder& audio, const std::vector<ImageTensor>& features) {
  MatF out(static_cast<Eigen::Index>(features.size()), audio.config().embed_dim);
  parallel_for(static_cast<int>(features.size()), [&](int i) { out.row(i) = audio.encode(features[i]); });
  return out;
}

MatF embed_frames(const Encoder& image, const std::vector<TriModalRecord>& records) {
  MatF out(static_cast<Eigen::Index>(records.size()), image.config().embed_dim);
  parallel_for(static_cast<int>(records.size()), [&](int i) { out.row(i) = image.encode(records[i].eval_frame()); });
  return out;
}

MatF embed_tokens(const Encoder& text, const std::vector<Tokens>& tokens) {
  MatF out(static_cast<Eigen::Index>(tokens.size()), text.config().embed_dim);
  parallel_for(static_cast<int>(tokens.size()),
               [&](int i) { out.row(i) = text.encode(std::span<const int>(tokens[i])); });
  return out;
}

CaptionTable caption_table(const std::vector<TriModalRecord>& records) {
  CaptionTable t;
  for (const auto& r : records) {
    if (!r.has_captions()) throw Error("record " + r.id + " has no captions");
    auto& rows = t.rows_of.emplace_back();
    for (const auto& c : r.captions) {
      rows.push_back(static_cast<int>(t.captions.size()));
      t.captions.push_back(c);
    }
  }
  return t;
}

double zero_shot_accuracy(const World& world, const TriModel& model, const MatF& audio,
                          const std::vector<TriModalRecord>& records, const std::string& prompt) {
  require_tower(model.text, "text");
  if (audio.rows() != static_cast<Eigen::Index>(records.size())) throw Error("zero-shot: one embedding per record is required");
  std::vector<Tokens> labels;
  for (int c = 0; c < world.config.num_classes; ++c) labels.push_back(world.label_tokens(c));
  const MatF L = embed_labels(*model.text, labels, world.vocab.encode(prompt));
  int hits = 0, n = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].labels.size() != 1) continue;
    ++n;
    hits += zero_shot_classify(audio.row(static_cast<Eigen::Index>(i)), L) == records[i].labels[0];
  }
  if (n == 0) throw Error("zero-shot: no single-label records");
  return 100.0 * hits / n;
}

TaskMetrics audio_text_metrics(const World& world, const TriModel& model, const MatF& audio,
                               const std::vector<TriModalRecord>& records, const std::string& prompt) {
  TaskMetrics m;
  m.zero_shot = zero_shot_accuracy(world, model, audio, records, prompt);
  const CaptionTable t = caption_table(records);
  const MatF caps = embed_tokens(*model.text, t.captions);
  m.a2t = recall_at_k(audio, caps, t.rows_of);
  std::vector<std::vector<int>> back(t.captions.size());
  for (std::size_t r = 0; r < t.rows_of.size(); ++r)
    for (int c : t.rows_of[r]) back[c] = {static_cast<int>(r)};
  m.t2a = recall_at_k(caps, audio, back);
  return m;
}

PairRetrieval vt_retrieval(const TriModel& model, const std::vector<TriModalRecord>& records) {
  require_tower(model.image, "image");
  require_tower(model.text, "text");
  const CaptionTable t = caption_table(records);
  const MatF imgs = embed_frames(*model.image, records);
  const MatF caps = embed_tokens(*model.text, t.captions);
  std::vector<std::vector<int>> back(t.captions.size());
  for (std::size_t r = 0; r < t.rows_of.size(); ++r)
    for (int c : t.rows_of[r]) back[c] = {static_cast<int>(r)};
  return {recall_at_k(imgs, caps, t.rows_of), recall_at_k(caps, imgs, back)};
}

PairRetrieval va_retrieval(const TriModel& model, const MatF& audio, const std::vector<TriModalRecord>& records) {
  require_tower(model.image, "image");
  const MatF imgs = embed_frames(*model.image, records);
  const auto gold = label_gold(records);
  return {recall_at_k(imgs, audio, gold), recall_at_k(audio, imgs, gold)};
}

MatD zero_shot_scores(const World& world, const TriModel& model, const MatF& audio, const std::string& prompt) {
  require_tower(model.text, "text");
  std::vector<Tokens> labels;
  for (int c = 0; c < world.config.num_classes; ++c) labels.push_back(world.label_tokens(c));
  const MatF L = embed_labels(*model.text, labels, world.vocab.encode(prompt));
  return (audio * L.transpose()).cast<double>();
}

std::vector<PivotabilityScore> probe_pivotability(const TriModel& model, const MatF& audio,
                                                  const std::vector<TriModalRecord>& records, int k) {
  require_tower(model.image, "image");
  require_tower(model.text, "text");
  const CaptionTable t = caption_table(records);
  const MatF imgs = embed_frames(*model.image, records);
  const MatF caps = embed_tokens(*model.text, t.captions);
  std::vector<PivotabilityScore> out(records.size());
  parallel_for(static_cast<int>(records.size()), [&](int i) {
    out[i] = pivotability(records[i].id, audio.row(i), k, imgs, caps, t.captions, records[i].captions);
  });
  return out;
}

}  // namespace pivotkit
