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

// Stage runner for image-text (VT), image-audio (VA), audio-text (AT) and
// supervised classification (CLF) training.
//
// Every random choice comes from a named stream derived from the stage seed
// and the epoch, so a run resumed from an epoch checkpoint continues exactly
// as the uninterrupted run would have.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pivotkit/checkpoint.hpp"
#include "pivotkit/encoder.hpp"
#include "pivotkit/objectives.hpp"
#include "pivotkit/rng.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit {

enum class FrameMode { kTrain, kEval };

/// train: uniform over the frames; eval: always the second frame.
int sample_frame_index(std::size_t frame_count, FrameMode mode, Rng& rng);
const ImageTensor& sample_frame(const std::vector<ImageTensor>& frames, FrameMode mode, Rng& rng);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr_weights = 1e-3;
  double lr_biases = 1e-3;
  double weight_decay = 0.0;  // weights only, decoupled
  double momentum = 0.9;      // SGD
  double beta1 = 0.9;         // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_epochs = 0;        // linear ramp over these epochs, then constant
  std::vector<int> milestones;  // multi-step decay epochs
  double gamma = 0.5;

  /// Learning-rate multiplier at `step` of `steps_per_epoch` in `epoch`.
  double lr_factor(int epoch, int step, int steps_per_epoch) const;
};

/// Applies updates to named parameter buffers; all state lives in an
/// OptimizerState so it can be checkpointed.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, OptimizerState& state);

  /// Call once per training step before the updates of that step.
  void begin_step();
  void update(const std::string& name, const ParamLayout& layout, ParamBuffer<float>& params,
              const ParamBuffer<float>& grad, double lr_factor, const std::vector<char>* slot_mask = nullptr);
  void update_scalar(const std::string& name, double& value, double grad, double lr_factor);

 private:
  OptimizerSpec spec_;
  OptimizerState& state_;
};

struct StageConfig {
  StageKind stage = StageKind::kVT;
  int batch_size = 64;
  int epochs = 1;
  OptimizerSpec optimizer;
  std::uint64_t seed = 0;
  bool freeze_image = false;
  bool freeze_audio = false;
  bool freeze_text = false;
  /// VA only: alternate VA and VT batches with the image tower trainable
  /// (the bi-bi-modal comparison setting). Pure VA needs the image frozen.
  bool bibi = false;
  /// AT only: add L(V,A) on the pairs' frames to L(A,T).
  bool vat = false;
  /// Trained tower: -1 trains every block; k >= 0 only the last k blocks
  /// plus the output projection (for CLF, k = 0 trains the head alone).
  int trainable_blocks = -1;
  double fixed_tau = 0.0;  // > 0 fixes the temperature of the trained pair
  bool augment = true;     // spectrogram masking on training audio
  double mask_time = 0.2;
  double mask_freq = 0.25;
  std::filesystem::path checkpoint_dir;  // per-epoch checkpoints when set
  std::filesystem::path log_path;        // JSON lines, one object per step
  std::filesystem::path resume_from;     // epoch checkpoint of this stage

  /// Freeze-flag consistency with the stage; throws before any step.
  void validate() const;
};

/// Inputs for a stage. Pointers reference storage owned by the caller
/// (usually a World plus precomputed spectrogram features).
struct StageData {
  // VT: images with their caption sets.
  std::vector<const ImageTensor*> vt_images;
  std::vector<const std::vector<Tokens>*> vt_captions;
  // VA: frame sets with normalized spectrograms.
  std::vector<const std::vector<ImageTensor>*> va_frames;
  std::vector<const ImageTensor*> va_audio;
  // AT: curated pairs; frames only for the VAT loss.
  std::vector<const ImageTensor*> at_audio;
  std::vector<const Tokens*> at_captions;
  std::vector<const std::vector<ImageTensor>*> at_frames;
  // CLF: spectrograms with label sets.
  std::vector<const ImageTensor*> clf_audio;
  std::vector<std::vector<int>> clf_labels;
};

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  double mean_loss = 0.0;
  double tau = 0.0;
};

struct StageResult {
  std::vector<EpochStats> epochs;
};

enum class HeadMode { kMultiClass, kMultiLabel };

/// Linear head on the audio embedding: softmax cross-entropy for
/// multi-class, per-label sigmoid BCE (summed over labels) for multi-label.
class ClassifierHead {
 public:
  ClassifierHead(int embed_dim, int num_classes, HeadMode mode, int trainable_layers, std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  HeadMode mode() const { return mode_; }
  int trainable_layers() const { return trainable_layers_; }
  const ParamLayout& layout() const { return layout_; }
  ParamBuffer<float>& params() { return params_; }
  const ParamBuffer<float>& params() const { return params_; }

  RowVec<float> logits(const RowVec<float>& embedding) const;
  /// Loss for one item and its gradients w.r.t. head params (accumulated)
  /// and the embedding (returned).
  double loss(const RowVec<float>& embedding, const std::vector<int>& labels, float* head_grad,
              RowVec<float>* d_embedding) const;
  int predict(const RowVec<float>& embedding) const;

 private:
  int num_classes_;
  HeadMode mode_;
  int trainable_layers_;
  ParamLayout layout_;
  ParamBuffer<float> params_;
};

/// Errors when num_classes < 2 or trainable_layers exceeds the encoder depth.
ClassifierHead attach_classifier_head(const Encoder& encoder, int num_classes, HeadMode mode,
                                      int trainable_layers = 0, std::uint64_t seed = 0);

/// Runs one stage in place on `model` (and `head` for CLF). Frozen towers are
/// never written.
StageResult run_stage(const StageConfig& cfg, const StageData& data, TriModel& model,
                      ClassifierHead* head = nullptr);

}  // namespace pivotkit
