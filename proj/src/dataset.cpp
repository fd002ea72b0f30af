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

#include "pivotkit/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "pivotkit/parallel.hpp"

namespace pivotkit {

int audio_frame_count(const WorldConfig& cfg) {
  const FbankOptions o = world_fbank_options(cfg);
  const auto n = static_cast<std::size_t>(std::lround(cfg.audio_seconds * cfg.sample_rate));
  return fbank_frame_count(n, window_samples(o, cfg.sample_rate), shift_samples(o, cfg.sample_rate));
}

namespace {

void apply_shape(EncoderConfig& c, const TowerShape& s) {
  c.width = s.width;
  c.layers = s.layers;
  c.heads = s.heads;
  c.embed_dim = s.embed_dim;
  c.patch.embed_dim = s.width;
}

}  // namespace

EncoderConfig image_encoder_config(const WorldConfig& cfg, const TowerShape& shape) {
  EncoderConfig c;
  c.modality = Modality::kImage;
  apply_shape(c, shape);
  c.patch.kernel_h = c.patch.kernel_w = shape.patch;
  c.patch.stride_h = c.patch.stride_w = shape.patch;
  c.patch.input_channels = 3;
  c.input_h = c.input_w = cfg.image_size;
  c.validate();
  return c;
}

EncoderConfig audio_encoder_config(const WorldConfig& cfg, const TowerShape& shape) {
  EncoderConfig c;
  c.modality = Modality::kAudio;
  apply_shape(c, shape);
  c.patch.kernel_h = c.patch.kernel_w = shape.patch;
  c.patch.stride_h = shape.patch;
  c.patch.stride_w = std::clamp((cfg.mel_bins - shape.patch) / 4, 1, shape.patch);
  c.patch.input_channels = 1;
  c.input_h = audio_frame_count(cfg);
  c.input_w = cfg.mel_bins;
  c.validate();
  return c;
}

EncoderConfig text_encoder_config(const World& world, const TowerShape& shape) {
  EncoderConfig c;
  c.modality = Modality::kText;
  apply_shape(c, shape);
  c.vocab_size = world.vocab.size();
  c.max_tokens = shape.max_tokens;
  c.validate();
  return c;
}

TriModel init_model(const World& world, std::uint64_t seed, const TowerShape& shape) {
  TriModel m;
  m.seed = seed;
  m.image.emplace(image_encoder_config(world.config, shape), mix64(seed ^ hash_name("init/image")));
  m.text.emplace(text_encoder_config(world, shape), mix64(seed ^ hash_name("init/text")));
  m.stage = "init";
  return m;
}

void init_audio_tower(TriModel& model, const WorldConfig& cfg, const TowerShape& shape) {
  if (!model.image) throw Error("init_audio_tower: model has no image encoder");
  model.audio.emplace(init_audio_from_image(*model.image, audio_encoder_config(cfg, shape)));
}

CorpusStats audio_corpus_stats(const World& world) {
  const FbankComputer fc(world_fbank_options(world.config), world.config.sample_rate);
  std::vector<FbankSpectrogram> specs(world.va.size());
  parallel_for(static_cast<int>(specs.size()), [&](int i) { specs[i] = fc.compute(world.va[i].audio); });
  return compute_corpus_stats(specs);
}

ImageTensor audio_feature(const World& world, const WaveformClip& clip, const CorpusStats& stats) {
  const FbankComputer fc(world_fbank_options(world.config), world.config.sample_rate);
  return ImageTensor::from_spectrogram(normalize(fc.compute(clip), stats));
}

std::vector<ImageTensor> audio_features(const World& world, const std::vector<TriModalRecord>& records,
                                        const CorpusStats& stats) {
  const FbankComputer fc(world_fbank_options(world.config), world.config.sample_rate);
  std::vector<ImageTensor> out(records.size());
  parallel_for(static_cast<int>(records.size()), [&](int i) {
    if (!records[i].has_audio()) throw Error("audio_features: record " + records[i].id + " has no audio");
    out[i] = ImageTensor::from_spectrogram(normalize(fc.compute(records[i].audio), stats));
  });
  return out;
}

StageData vt_stage_data(const World& world) {
  StageData d;
  for (const auto& r : world.vt) {
    d.vt_images.push_back(&r.frames.front());
    d.vt_captions.push_back(&r.captions);
  }
  return d;
}

StageData va_stage_data(const World& world, const std::vector<ImageTensor>& va_audio) {
  if (va_audio.size() != world.va.size()) throw Error("va_stage_data: feature count differs from the VA split");
  StageData d;
  for (std::size_t i = 0; i < world.va.size(); ++i) {
    d.va_frames.push_back(&world.va[i].frames);
    d.va_audio.push_back(&va_audio[i]);
  }
  return d;
}

StageData bibi_stage_data(const World& world, const std::vector<ImageTensor>& va_audio) {
  StageData d = va_stage_data(world, va_audio);
  const StageData vt = vt_stage_data(world);
  d.vt_images = vt.vt_images;
  d.vt_captions = vt.vt_captions;
  return d;
}

}  // namespace pivotkit
