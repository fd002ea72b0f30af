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

// Contrastive objectives over batches of unit-norm embeddings, and the
// encoder-level steps built on them.
//
// Embedding batches are (N x d) matrices, one embedding per row, with row i
// of A and row i of B forming the positive pair.

#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "pivotkit/common.hpp"
#include "pivotkit/encoder.hpp"

namespace pivotkit {

/// Similarity scale 1/tau, stored as a log so it can be learned. tau is
/// clamped to at least `min_tau`.
struct Temperature {
  double log_scale = std::log(1.0 / 0.07);
  bool learnable = true;
  double min_tau = 0.01;

  double scale() const { return std::min(std::exp(log_scale), 1.0 / min_tau); }
  double tau() const { return 1.0 / scale(); }
  bool clamped() const { return std::exp(log_scale) >= 1.0 / min_tau; }

  static Temperature fixed(double tau);
};

template <typename T>
struct SimilarityMatrix {
  Mat<T> values;  // values(i, j) = <a_i, b_j> / tau
  double temperature = 1.0;
};

template <typename T>
SimilarityMatrix<T> similarity_matrix(const Mat<T>& a, const Mat<T>& b, double tau);

/// Loss plus gradients with respect to both embedding batches and the log
/// similarity scale.
template <typename T>
struct LossValue {
  double value = 0.0;
  Mat<T> grad_a;
  Mat<T> grad_b;
  double grad_log_scale = 0.0;
};

/// Symmetric InfoNCE: mean over i of the row-wise and column-wise
/// -log softmax of the diagonal.
template <typename T>
LossValue<T> info_nce(const Mat<T>& a, const Mat<T>& b, const Temperature& temp);

/// Index pairs (row of the first batch, row of the second batch).
using IndexPairs = std::vector<std::pair<int, int>>;

struct BiBiPairing {
  IndexPairs image_audio;
  IndexPairs image_text;
};

template <typename T>
struct TriLossValue {
  double value = 0.0;
  Mat<T> grad_image;
  Mat<T> grad_audio;
  Mat<T> grad_text;
  double grad_log_scale = 0.0;
};

/// L(V,A) + L(V,T), each over its own pairing. Both pairings must be
/// non-empty.
template <typename T>
TriLossValue<T> loss_bibi(const Mat<T>& image, const Mat<T>& audio, const Mat<T>& text,
                          const BiBiPairing& pairing, const Temperature& temp);

/// L(V,A) + L(A,T) + L(V,T) on co-indexed batches.
template <typename T>
TriLossValue<T> loss_tri(const Mat<T>& image, const Mat<T>& audio, const Mat<T>& text,
                         const Temperature& temp);

// ---------------------------------------------------------------------------
// Encoder-level steps

/// One side of a contrastive pair: an encoder plus its batch inputs, or
/// precomputed embeddings when the encoder is frozen.
template <typename T>
struct TowerBatch {
  const ModalEncoder<T>* encoder = nullptr;
  std::span<const EncoderInput> inputs;
  const Mat<T>* precomputed = nullptr;  // only valid for frozen towers
  int first_trainable_block = 0;
};

template <typename T>
struct StepResult {
  double loss = 0.0;
  ParamBuffer<T> grad_a;  // empty when tower A is frozen
  ParamBuffer<T> grad_b;  // empty when tower B is frozen
  double grad_log_scale = 0.0;
  Mat<T> emb_a;
  Mat<T> emb_b;
};

/// Embeddings of one tower for a batch, with the caches needed for backward
/// when the tower is trainable.
template <typename T>
struct TowerForward {
  Mat<T> emb;
  std::vector<typename ModalEncoder<T>::Cache> caches;
  bool trainable = false;
};

template <typename T>
TowerForward<T> forward_tower(const TowerBatch<T>& tower);

/// Parameter gradient of a trainable tower given d(loss)/d(embeddings),
/// accumulated over kGradientChunks fixed chunks in chunk order.
template <typename T>
ParamBuffer<T> backward_tower(const TowerBatch<T>& tower, const TowerForward<T>& pass, const Mat<T>& grad_emb);

/// Forward both towers, InfoNCE, backward into every non-frozen tower.
/// Gradient accumulation uses fixed chunking, so results do not depend on
/// the worker count.
template <typename T>
StepResult<T> contrastive_step(const TowerBatch<T>& a, const TowerBatch<T>& b, const Temperature& temp);

/// min over audio parameters of L(V, A). The image tower must be frozen.
template <typename T>
StepResult<T> loss_va_frozen(const TowerBatch<T>& image, const TowerBatch<T>& audio, const Temperature& temp);

/// L(A, T) on curated pairs. The text tower must be frozen.
template <typename T>
StepResult<T> loss_at(const TowerBatch<T>& audio, const TowerBatch<T>& text, const Temperature& temp);

/// Embeds every input with the encoder (inference mode).
template <typename T>
Mat<T> embed_all(const ModalEncoder<T>& enc, std::span<const EncoderInput> inputs);

}  // namespace pivotkit
