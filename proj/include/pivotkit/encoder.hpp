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

// Modality encoders: patch (or token) embedding, a pre-norm transformer, and
// a linear projection into the shared unit-norm embedding space.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pivotkit/common.hpp"
#include "pivotkit/frontend.hpp"
#include "pivotkit/params.hpp"

namespace pivotkit {

/// Channels-first float tensor (C x H x W). Spectrograms are 1 x T x F.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, 0.0f) {}

  float& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }

  static ImageTensor from_spectrogram(const FbankSpectrogram& spec);
};

struct PatchConfig {
  int kernel_h = 32;
  int kernel_w = 32;
  int stride_h = 32;
  int stride_w = 32;
  int input_channels = 3;
  int embed_dim = 64;

  void validate() const;
  bool operator==(const PatchConfig&) const = default;
};

struct GridShape {
  int rows = 0;
  int cols = 0;
  int tokens() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

/// rows = floor((H - kh)/sh) + 1, cols likewise.
GridShape patch_grid(int height, int width, const PatchConfig& cfg);

struct EncoderConfig {
  Modality modality = Modality::kImage;
  PatchConfig patch;  // image / audio
  int input_h = 0;    // image / audio input shape, defines the positional grid
  int input_w = 0;
  int vocab_size = 0;  // text
  int max_tokens = 0;  // text
  int width = 64;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int embed_dim = 32;  // shared space dimension d

  GridShape grid() const;
  /// Positional rows excluding the sequence-start vector.
  int positions() const;
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// 2D positional grid plus the sequence-start vector, which interpolation
/// passes through untouched.
template <typename T>
struct PositionGrid {
  RowVec<T> start;
  Mat<T> grid;  // (rows*cols) x dim, row-major over (row, col)
  int rows = 0;
  int cols = 0;
};

/// Bilinear resize over the normalized [0,1]^2 grid with corners aligned.
template <typename T>
PositionGrid<T> interpolate_positions(const PositionGrid<T>& grid, int target_rows, int target_cols);

/// [out, in*kh*kw] -> [out, kh*kw], averaging over the input channels.
template <typename T>
Mat<T> adapt_kernel_channels(const Mat<T>& weights, int in_channels);

struct EncoderInput {
  const ImageTensor* image = nullptr;
  std::span<const int> tokens;

  static EncoderInput of(const ImageTensor& img) { return {&img, {}}; }
  static EncoderInput of(std::span<const int> toks) { return {nullptr, toks}; }
};

template <typename T>
class ModalEncoder {
 public:
  struct NormCache {
    Mat<T> xhat;
    Vec<T> rstd;
  };
  struct BlockCache {
    NormCache ln1;
    Mat<T> attn_in;
    Mat<T> qkv;
    std::vector<Mat<T>> probs;
    Mat<T> attn_cat;
    NormCache ln2;
    Mat<T> mlp_in;
    Mat<T> hidden;
    Mat<T> act;
  };
  struct Cache {
    Mat<T> patches;
    std::vector<int> tokens;
    NormCache ln_pre;
    std::vector<BlockCache> blocks;
    NormCache ln_post;
    RowVec<T> pooled;  // ln_post output
    RowVec<T> z;       // projected, before normalization
    T z_norm = 0;
    RowVec<T> out;
  };

  ModalEncoder() = default;
  /// Random initialization from `seed`.
  ModalEncoder(const EncoderConfig& cfg, std::uint64_t seed);
  /// Wraps an existing buffer; the layout must match `cfg`.
  ModalEncoder(const EncoderConfig& cfg, ParamBuffer<T> params);

  const EncoderConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  ParamBuffer<T>& params() { return params_; }
  const ParamBuffer<T>& params() const { return params_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  GridShape grid() const { return cfg_.grid(); }

  /// Unit-norm embedding. Fills `cache` for a later backward() when given.
  RowVec<T> forward(const EncoderInput& in, Cache* cache = nullptr) const;

  /// Accumulates dLoss/dparams into `grad` (layout-sized). Blocks before
  /// `first_trainable_block` and the input embedding are skipped when it is
  /// positive; pass `layers` to train only the post-norm and projection.
  void backward(const Cache& cache, const RowVec<T>& d_out, T* grad,
                int first_trainable_block = 0) const;

  RowVec<T> encode(const ImageTensor& img) const { return forward(EncoderInput::of(img)); }
  RowVec<T> encode(const FbankSpectrogram& spec) const;
  RowVec<T> encode(std::span<const int> tokens) const { return forward(EncoderInput::of(tokens)); }

  PositionGrid<T> position_grid() const;
  /// Copy whose positional grid is resized for a new input shape.
  ModalEncoder resized_for_input(int input_h, int input_w) const;

  template <typename U>
  ModalEncoder<U> cast() const {
    ParamBuffer<U> p(params_.begin(), params_.end());
    ModalEncoder<U> out(cfg_, std::move(p));
    out.set_frozen(frozen_);
    return out;
  }

  // Slot indices, exposed for tests and weight surgery.
  struct BlockSlots {
    int ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  struct Slots {
    int embed = -1;  // patch.weight or token_embedding
    int cls = -1;
    int pos = -1;
    int ln_pre_g = -1, ln_pre_b = -1;
    std::vector<BlockSlots> blocks;
    int ln_post_g = -1, ln_post_b = -1;
    int proj = -1;
  };
  const Slots& slots() const { return slots_; }

 private:
  void build_layout();
  Mat<T> extract_patches(const ImageTensor& img) const;

  EncoderConfig cfg_;
  ParamLayout layout_;
  Slots slots_;
  ParamBuffer<T> params_;
  bool frozen_ = false;
};

extern template class ModalEncoder<float>;
extern template class ModalEncoder<double>;

using Encoder = ModalEncoder<float>;

/// Builds an audio encoder from an image encoder: transformer and projection
/// are copied, the patch kernel is channel-averaged, and the positional grid
/// is interpolated to the audio grid. `audio` must describe a 1-channel
/// patch config with the image kernel size and the same transformer shape.
template <typename T>
ModalEncoder<T> init_audio_from_image(const ModalEncoder<T>& image_encoder, const EncoderConfig& audio);

}  // namespace pivotkit
