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

// Checkpoints: manifest.json (configs, freeze flags, offset tables,
// temperatures, optimizer scalars) plus params.bin, a flat float32
// little-endian blob addressed by the offset tables.
//
// Embedding dumps: header (u32 count, u32 d), then per item a u32 id length,
// UTF-8 id bytes, one modality byte and d float32 values.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pivotkit/encoder.hpp"
#include "pivotkit/frontend.hpp"
#include "pivotkit/objectives.hpp"

namespace pivotkit {

/// The three towers plus the per-pair similarity scales.
struct TriModel {
  std::optional<Encoder> image;
  std::optional<Encoder> audio;
  std::optional<Encoder> text;
  Temperature vt_temp;
  Temperature va_temp;
  Temperature at_temp;
  std::optional<CorpusStats> audio_stats;  // spectrogram normalization
  std::uint64_t seed = 0;
  std::string stage;  // last stage that wrote this model
  int epoch = 0;      // epochs completed in that stage
};

/// Optimizer state, keyed by buffer name ("audio.m", "audio.v", ...).
struct OptimizerState {
  std::string kind;
  std::int64_t step = 0;
  std::map<std::string, ParamBuffer<float>> buffers;
  std::map<std::string, double> scalars;
};

void save_checkpoint(const std::filesystem::path& dir, const TriModel& model, const OptimizerState* opt = nullptr);
TriModel load_checkpoint(const std::filesystem::path& dir, OptimizerState* opt = nullptr);
bool checkpoint_exists(const std::filesystem::path& dir);

struct EmbeddingDump {
  std::vector<std::string> ids;
  std::vector<Modality> modalities;
  MatF values;  // one row per item
};

void write_embedding_dump(const std::filesystem::path& path, const EmbeddingDump& dump);
EmbeddingDump read_embedding_dump(const std::filesystem::path& path);

}  // namespace pivotkit
