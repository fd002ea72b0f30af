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

// Whole-split evaluation on a trained TriModel, shared by the CLI and the
// acceptance runner.

#pragma once

#include <string>
#include <vector>

#include "pivotkit/checkpoint.hpp"
#include "pivotkit/eval.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit {

inline constexpr const char* kAudioPrompt = "the sound of";
inline constexpr const char* kImagePrompt = "a photo of";

MatF embed_audio(const Encoder& audio, const std::vector<ImageTensor>& features);
/// Eval frame of every record.
MatF embed_frames(const Encoder& image, const std::vector<TriModalRecord>& records);
MatF embed_tokens(const Encoder& text, const std::vector<Tokens>& tokens);

/// All captions of `records` in order, with each record's caption rows.
struct CaptionTable {
  std::vector<Tokens> captions;
  std::vector<std::vector<int>> rows_of;
};
CaptionTable caption_table(const std::vector<TriModalRecord>& records);

struct TaskMetrics {
  double zero_shot = 0.0;  // percent, single-label records
  RetrievalResult a2t;
  RetrievalResult t2a;
};

/// Zero-shot accuracy with the audio prompt and A<->T retrieval on
/// `records`. `audio`: one embedding row per record.
TaskMetrics audio_text_metrics(const World& world, const TriModel& model, const MatF& audio,
                               const std::vector<TriModalRecord>& records, const std::string& prompt = kAudioPrompt);

double zero_shot_accuracy(const World& world, const TriModel& model, const MatF& audio,
                          const std::vector<TriModalRecord>& records, const std::string& prompt = kAudioPrompt);

/// Image->text and text->image retrieval over the eval frames and captions.
struct PairRetrieval {
  RetrievalResult forward;
  RetrievalResult backward;
};
PairRetrieval vt_retrieval(const TriModel& model, const std::vector<TriModalRecord>& records);
/// Image->audio and audio->image by label relevance.
PairRetrieval va_retrieval(const TriModel& model, const MatF& audio, const std::vector<TriModalRecord>& records);

/// Label-prompt cosine scores, one row per record, for mAP.
MatD zero_shot_scores(const World& world, const TriModel& model, const MatF& audio, const std::string& prompt = kAudioPrompt);

/// Pivotability of every record: its audio retrieves eval frames, the frames
/// retrieve eval captions, scored against the record's own captions.
std::vector<PivotabilityScore> probe_pivotability(const TriModel& model, const MatF& audio,
                                                  const std::vector<TriModalRecord>& records, int k);

}  // namespace pivotkit
