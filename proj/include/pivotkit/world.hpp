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

// Procedural tri-modal world: every record's image frames, audio and
// captions are rendered from the same latent label set, and the splits
// only expose the modality pairs a given stage is allowed to see.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "pivotkit/common.hpp"
#include "pivotkit/encoder.hpp"
#include "pivotkit/frontend.hpp"

namespace pivotkit {

/// Number of distinct classes the built-in catalogue can render.
inline constexpr int kPatternCapacity = 32;
inline constexpr int kFramesPerClip = 4;
inline constexpr int kEvalFrameIndex = 1;

using Tokens = std::vector<int>;

class Vocab {
 public:
  int add(const std::string& word);
  int id(const std::string& word) const;  // throws on unknown words
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  const std::string& word(int id) const { return words_.at(id); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  /// Space-separated words to ids.
  Tokens encode(const std::string& text) const;
  std::string decode(const Tokens& tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct WorldConfig {
  int num_classes = 16;
  int image_size = 24;  // square, 3 channels
  double audio_seconds = 0.5;
  double sample_rate = 16000.0;
  int mel_bins = 32;
  int vocab_size = 0;  // 0: exactly the words the grammar needs; larger pads with filler words
  int captions_per_audio = 5;
  double image_noise = 0.6;
  double audio_noise = 0.6;
  double text_noise = 0.5;
  int max_labels = 1;
  int vt_size = 2048;
  int va_size = 2048;
  int at_gold_size = 1024;
  int eval_size = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClassInfo {
  std::string name;                // label text
  std::vector<std::string> words;  // content words, name first
  ImageTensor pattern;             // unit-variance visual template
  double base_hz = 0.0;
  int harmonics = 1;
  int envelope = 0;  // 0 steady, 1 pulsed, 2 amplitude-modulated
  double rate_hz = 0.0;
};

struct TriModalRecord {
  std::string id;
  std::vector<int> labels;  // sorted, non-empty
  int intensity = 1;        // 0 quiet, 1 loud; shared by all modalities
  std::vector<ImageTensor> frames;
  WaveformClip audio;
  std::vector<Tokens> captions;

  bool has_frames() const { return !frames.empty(); }
  bool has_audio() const { return !audio.samples.empty(); }
  bool has_captions() const { return !captions.empty(); }
  const ImageTensor& eval_frame() const;
};

enum class SplitKind : std::uint8_t { kVT, kVA, kATGold, kEval };
const char* split_name(SplitKind s);

/// A generated world. The audio-text gold set is only handed out to the AT
/// stage; every other requester gets a QuarantineError.
class World {
 public:
  WorldConfig config;
  Vocab vocab;
  std::vector<ClassInfo> classes;
  std::vector<TriModalRecord> vt;    // image + captions
  std::vector<TriModalRecord> va;    // four frames + audio
  std::vector<TriModalRecord> eval;  // all three modalities
  double centroid_oracle_accuracy = 0.0;

  const std::vector<TriModalRecord>& at_gold(StageKind requester) const;
  std::size_t at_gold_size() const { return at_gold_.size(); }

  /// Label text tokens for class c, optionally behind a prompt.
  Tokens label_tokens(int c, const std::string& prompt = "") const;

 private:
  friend World generate_world(const WorldConfig&);
  friend World load_world(const std::filesystem::path&);
  friend void save_world(const World&, const std::filesystem::path&);
  std::vector<TriModalRecord> at_gold_;
};

World generate_world(const WorldConfig& cfg);

/// Same as generate_world with label sets of 1..max_labels classes; audio is
/// the sum of the class sounds and the image composes the class patterns.
World make_multilabel(WorldConfig cfg, int max_labels);

/// Variant of `world` for out-of-domain evaluation: longer audio and more
/// noise, eval split only, same classes and vocabulary.
World domain_shifted(const WorldConfig& cfg, double duration_factor = 1.8, double noise_factor = 1.5);

/// Freshly rendered captions, `per_class` for each class and intensity,
/// from a stream independent of every split.
std::vector<Tokens> template_captions(const World& world, int per_class, std::uint64_t seed);

/// Classes whose content words occur in `caption`, sorted.
std::vector<int> caption_classes(const World& world, const Tokens& caption);

/// Renders the noise-free waveform of a label set (used by tests).
WaveformClip render_clean_audio(const World& world, const std::vector<int>& labels, int intensity = 1);

FbankOptions world_fbank_options(const WorldConfig& cfg);

/// Nearest-centroid accuracy on normalized raw spectrograms, centroids from
/// `train`, scored on `test`, both single-label.
double centroid_accuracy(const World& world, const std::vector<TriModalRecord>& train,
                         const std::vector<TriModalRecord>& test);

void save_world(const World& world, const std::filesystem::path& dir);
World load_world(const std::filesystem::path& dir);

}  // namespace pivotkit
