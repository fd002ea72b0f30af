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

#include "pivotkit/objectives.hpp"

#include <string>

#include "pivotkit/parallel.hpp"

namespace pivotkit {

Temperature Temperature::fixed(double tau) {
  if (!(tau > 0)) throw Error("temperature must be positive");
  Temperature t;
  t.log_scale = std::log(1.0 / tau);
  t.learnable = false;
  t.min_tau = std::min(t.min_tau, tau);
  return t;
}

template <typename T>
SimilarityMatrix<T> similarity_matrix(const Mat<T>& a, const Mat<T>& b, double tau) {
  if (!(tau > 0)) throw Error("similarity_matrix: temperature must be positive");
  if (a.rows() != b.rows()) throw Error("similarity_matrix: batch sizes differ");
  if (a.cols() != b.cols()) throw Error("similarity_matrix: embedding dimensions differ");
  for (const Mat<T>* m : {&a, &b})
    for (Eigen::Index i = 0; i < m->rows(); ++i)
      if (std::abs(static_cast<double>(m->row(i).norm()) - 1.0) > 1e-4)
        throw Error("similarity_matrix: embeddings must be unit-norm");
  SimilarityMatrix<T> s;
  s.temperature = tau;
  s.values = (a * b.transpose()) / static_cast<T>(tau);
  return s;
}

template <typename T>
LossValue<T> info_nce(const Mat<T>& a, const Mat<T>& b, const Temperature& temp) {
  const Eigen::Index n = a.rows();
  if (n < 2 || b.rows() < 2) throw Error("contrastive loss undefined for batch of 1");
  if (n != b.rows()) throw Error("info_nce: batch sizes differ");
  if (a.cols() != b.cols()) throw Error("info_nce: embedding dimensions differ");
  const double scale = temp.scale();

  // Accumulate in double regardless of T.
  const MatD dots = (a * b.transpose()).template cast<double>();
  const MatD logits = dots * scale;
  MatD d_logits = MatD::Zero(n, n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    loss += -(logits(i, i) - mx - std::log(z));
    d_logits.row(i) += e / z;
    d_logits(i, i) -= 1.0;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const double mx = logits.col(j).maxCoeff();
    const Eigen::VectorXd e = (logits.col(j).array() - mx).exp();
    const double z = e.sum();
    loss += -(logits(j, j) - mx - std::log(z));
    d_logits.col(j) += e / z;
    d_logits(j, j) -= 1.0;
  }
  loss /= static_cast<double>(n);
  d_logits /= static_cast<double>(n);

  LossValue<T> out;
  out.value = loss;
  const MatD d_dots = d_logits * scale;
  out.grad_a = (d_dots * b.template cast<double>()).template cast<T>();
  out.grad_b = (d_dots.transpose() * a.template cast<double>()).template cast<T>();
  out.grad_log_scale = (temp.learnable && !temp.clamped()) ? (d_logits.array() * logits.array()).sum() : 0.0;
  return out;
}

namespace {

template <typename T>
Mat<T> gather(const Mat<T>& m, const IndexPairs& pairs, bool first) {
  Mat<T> out(static_cast<Eigen::Index>(pairs.size()), m.cols());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const int idx = first ? pairs[k].first : pairs[k].second;
    if (idx < 0 || idx >= m.rows()) throw Error("pairing index out of range");
    out.row(k) = m.row(idx);
  }
  return out;
}

template <typename T>
void scatter_add(Mat<T>& dst, const Mat<T>& src, const IndexPairs& pairs, bool first) {
  for (std::size_t k = 0; k < pairs.size(); ++k) dst.row(first ? pairs[k].first : pairs[k].second) += src.row(k);
}

}  // namespace

template <typename T>
TriLossValue<T> loss_bibi(const Mat<T>& image, const Mat<T>& audio, const Mat<T>& text, const BiBiPairing& pairing,
                          const Temperature& temp) {
  if (pairing.image_audio.empty() || pairing.image_text.empty())
    throw Error("loss_bibi: both the image-audio and the image-text pairing are required");
  const auto va = info_nce<T>(gather(image, pairing.image_audio, true), gather(audio, pairing.image_audio, false), temp);
  const auto vt = info_nce<T>(gather(image, pairing.image_text, true), gather(text, pairing.image_text, false), temp);
  TriLossValue<T> out;
  out.value = va.value + vt.value;
  out.grad_image = Mat<T>::Zero(image.rows(), image.cols());
  out.grad_audio = Mat<T>::Zero(audio.rows(), audio.cols());
  out.grad_text = Mat<T>::Zero(text.rows(), text.cols());
  scatter_add(out.grad_image, va.grad_a, pairing.image_audio, true);
  scatter_add(out.grad_audio, va.grad_b, pairing.image_audio, false);
  scatter_add(out.grad_image, vt.grad_a, pairing.image_text, true);
  scatter_add(out.grad_text, vt.grad_b, pairing.image_text, false);
  out.grad_log_scale = va.grad_log_scale + vt.grad_log_scale;
  return out;
}

template <typename T>
TriLossValue<T> loss_tri(const Mat<T>& image, const Mat<T>& audio, const Mat<T>& text, const Temperature& temp) {
  const auto va = info_nce<T>(image, audio, temp);
  const auto at = info_nce<T>(audio, text, temp);
  const auto vt = info_nce<T>(image, text, temp);
  TriLossValue<T> out;
  // Summed as (VA + VT) + AT so it decomposes exactly into loss_bibi + L(A,T).
  out.value = (va.value + vt.value) + at.value;
  out.grad_image = va.grad_a + vt.grad_a;
  out.grad_audio = va.grad_b + at.grad_a;
  out.grad_text = at.grad_b + vt.grad_b;
  out.grad_log_scale = va.grad_log_scale + at.grad_log_scale + vt.grad_log_scale;
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Mat<T> embed_all(const ModalEncoder<T>& enc, std::span<const EncoderInput> inputs) {
  Mat<T> out(static_cast<Eigen::Index>(inputs.size()), enc.config().embed_dim);
  parallel_for(static_cast<int>(inputs.size()), [&](int i) { out.row(i) = enc.forward(inputs[i]); });
  return out;
}

template <typename T>
TowerForward<T> forward_tower(const TowerBatch<T>& t) {
  if (!t.encoder) throw Error("contrastive step: missing encoder");
  TowerForward<T> pass;
  pass.trainable = !t.encoder->frozen();
  if (t.precomputed) {
    if (pass.trainable)
      throw Error(std::string("contrastive step: precomputed embeddings given for a trainable ") +
                  modality_name(t.encoder->config().modality) + " tower");
    pass.emb = *t.precomputed;
    return pass;
  }
  const int n = static_cast<int>(t.inputs.size());
  pass.emb.resize(n, t.encoder->config().embed_dim);
  if (pass.trainable) {
    pass.caches.resize(n);
    parallel_for(n, [&](int i) { pass.emb.row(i) = t.encoder->forward(t.inputs[i], &pass.caches[i]); });
  } else {
    parallel_for(n, [&](int i) { pass.emb.row(i) = t.encoder->forward(t.inputs[i]); });
  }
  return pass;
}

template <typename T>
ParamBuffer<T> backward_tower(const TowerBatch<T>& t, const TowerForward<T>& pass, const Mat<T>& grad_emb) {
  if (!pass.trainable) throw Error("backward_tower: tower is frozen");
  const ModalEncoder<T>& enc = *t.encoder;
  const int n = static_cast<int>(pass.caches.size());
  const std::size_t size = enc.params().size();
  const int chunks = std::max(1, std::min(kGradientChunks, n));
  std::vector<ParamBuffer<T>> partial(chunks, ParamBuffer<T>(size, T(0)));
  parallel_chunks(n, chunks, [&](int c, int b, int e) {
    for (int i = b; i < e; ++i)
      enc.backward(pass.caches[i], RowVec<T>(grad_emb.row(i)), partial[c].data(), t.first_trainable_block);
  });
  ParamBuffer<T> total = std::move(partial[0]);
  for (int c = 1; c < chunks; ++c)
    for (std::size_t k = 0; k < size; ++k) total[k] += partial[c][k];
  return total;
}

template <typename T>
StepResult<T> contrastive_step(const TowerBatch<T>& a, const TowerBatch<T>& b, const Temperature& temp) {
  TowerForward<T> pa = forward_tower(a);
  TowerForward<T> pb = forward_tower(b);
  if (pa.emb.rows() != pb.emb.rows()) throw Error("contrastive step: towers have different batch sizes");
  const LossValue<T> loss = info_nce<T>(pa.emb, pb.emb, temp);
  StepResult<T> out;
  out.loss = loss.value;
  out.grad_log_scale = loss.grad_log_scale;
  if (pa.trainable) out.grad_a = backward_tower(a, pa, loss.grad_a);
  if (pb.trainable) out.grad_b = backward_tower(b, pb, loss.grad_b);
  out.emb_a = std::move(pa.emb);
  out.emb_b = std::move(pb.emb);
  return out;
}

template <typename T>
StepResult<T> loss_va_frozen(const TowerBatch<T>& image, const TowerBatch<T>& audio, const Temperature& temp) {
  if (!image.encoder || !image.encoder->frozen())
    throw Error("loss_va_frozen: image encoder must be frozen (it is the pivot)");
  if (!audio.encoder || audio.encoder->frozen()) throw Error("loss_va_frozen: audio encoder must be trainable");
  return contrastive_step(image, audio, temp);
}

template <typename T>
StepResult<T> loss_at(const TowerBatch<T>& audio, const TowerBatch<T>& text, const Temperature& temp) {
  if (!text.encoder || !text.encoder->frozen()) throw Error("loss_at: text encoder must be frozen");
  if (!audio.encoder || audio.encoder->frozen()) throw Error("loss_at: audio encoder must be trainable");
  return contrastive_step(audio, text, temp);
}

#define PIVOTKIT_INSTANTIATE(T)                                                                              \
  template SimilarityMatrix<T> similarity_matrix(const Mat<T>&, const Mat<T>&, double);                      \
  template LossValue<T> info_nce(const Mat<T>&, const Mat<T>&, const Temperature&);                          \
  template TriLossValue<T> loss_bibi(const Mat<T>&, const Mat<T>&, const Mat<T>&, const BiBiPairing&,        \
                                     const Temperature&);                                                    \
  template TriLossValue<T> loss_tri(const Mat<T>&, const Mat<T>&, const Mat<T>&, const Temperature&);        \
  template Mat<T> embed_all(const ModalEncoder<T>&, std::span<const EncoderInput>);                         \
  template TowerForward<T> forward_tower(const TowerBatch<T>&);                                            \
  template ParamBuffer<T> backward_tower(const TowerBatch<T>&, const TowerForward<T>&, const Mat<T>&);      \
  template StepResult<T> contrastive_step(const TowerBatch<T>&, const TowerBatch<T>&, const Temperature&);   \
  template StepResult<T> loss_va_frozen(const TowerBatch<T>&, const TowerBatch<T>&, const Temperature&);     \
  template StepResult<T> loss_at(const TowerBatch<T>&, const TowerBatch<T>&, const Temperature&);

PIVOTKIT_INSTANTIATE(float)
PIVOTKIT_INSTANTIATE(double)

#undef PIVOTKIT_INSTANTIATE

}  // namespace pivotkit
