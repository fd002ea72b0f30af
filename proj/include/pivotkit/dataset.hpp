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

// Glue between a World and the trainer: encoder shapes for the world's
// inputs, spectrogram features, and StageData views over the splits.

#pragma once

#include <vector>

#include "pivotkit/checkpoint.hpp"
#include "pivotkit/training.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit {

struct TowerShape {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int embed_dim = 32;
  int patch = 8;
  int max_tokens = 16;
};

/// Spectrogram frames for the world's clip length.
int audio_frame_count(const WorldConfig& cfg);

EncoderConfig image_encoder_config(const WorldConfig& cfg, const TowerShape& shape = {});
/// Same kernel as the image tower so it can be initialized from it; the
/// frequency stride is chosen to tile the mel axis.
EncoderConfig audio_encoder_config(const WorldConfig& cfg, const TowerShape& shape = {});
EncoderConfig text_encoder_config(const World& world, const TowerShape& shape = {});

/// Fresh image and text towers; the audio tower is created by the VA stage.
TriModel init_model(const World& world, std::uint64_t seed, const TowerShape& shape = {});

/// Audio tower initialized from the model's image tower.
void init_audio_tower(TriModel& model, const WorldConfig& cfg, const TowerShape& shape = {});

/// Log-mel statistics over the VA corpus (the only large audio corpus the
/// pipeline is allowed to read before fine-tuning).
CorpusStats audio_corpus_stats(const World& world);

/// Normalized 1 x frames x mel features, one per record.
std::vector<ImageTensor> audio_features(const World& world, const std::vector<TriModalRecord>& records,
                                        const CorpusStats& stats);
ImageTensor audio_feature(const World& world, const WaveformClip& clip, const CorpusStats& stats);

/// Views over the VT split (first frame of each record).
StageData vt_stage_data(const World& world);
/// Views over the VA split and its features (same order).
StageData va_stage_data(const World& world, const std::vector<ImageTensor>& va_audio);
/// VT and VA together, for the bi-bi-modal setting.
StageData bibi_stage_data(const World& world, const std::vector<ImageTensor>& va_audio);

}  // namespace pivotkit
