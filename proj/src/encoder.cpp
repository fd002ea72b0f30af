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

#include "pivotkit/encoder.hpp"

#include <cmath>
#include <sstream>

#include "pivotkit/rng.hpp"

namespace pivotkit {

// ---------------------------------------------------------------------------
// Layout helpers

int ParamLayout::add(std::string name, int rows, int cols, bool bias_group) {
  ParamSlot s;
  s.name = std::move(name);
  s.offset = total_;
  s.rows = rows;
  s.cols = cols;
  s.bias_group = bias_group;
  total_ += s.size();
  slots_.push_back(std::move(s));
  return static_cast<int>(slots_.size()) - 1;
}

int ParamLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].name == name) return static_cast<int>(i);
  return -1;
}

bool ParamLayout::operator==(const ParamLayout& o) const {
  if (total_ != o.total_ || slots_.size() != o.slots_.size()) return false;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto& a = slots_[i];
    const auto& b = o.slots_[i];
    if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols ||
        a.bias_group != b.bias_group)
      return false;
  }
  return true;
}

ImageTensor ImageTensor::from_spectrogram(const FbankSpectrogram& spec) {
  ImageTensor t(1, spec.frames(), spec.mel_bins());
  std::copy(spec.values.data(), spec.values.data() + spec.values.size(), t.data.begin());
  return t;
}

void PatchConfig::validate() const {
  if (kernel_h <= 0 || kernel_w <= 0 || stride_h <= 0 || stride_w <= 0 || input_channels <= 0 ||
      embed_dim <= 0)
    throw Error("patch config: all sizes must be positive");
  if (stride_h > kernel_h || stride_w > kernel_w)
    throw Error("patch config: stride larger than kernel leaves gaps");
}

GridShape patch_grid(int height, int width, const PatchConfig& cfg) {
  cfg.validate();
  if (height < cfg.kernel_h || width < cfg.kernel_w) {
    std::ostringstream ss;
    ss << "patch_grid: input " << height << "x" << width << " is smaller than kernel "
       << cfg.kernel_h << "x" << cfg.kernel_w;
    throw Error(ss.str());
  }
  return {(height - cfg.kernel_h) / cfg.stride_h + 1, (width - cfg.kernel_w) / cfg.stride_w + 1};
}

GridShape EncoderConfig::grid() const {
  if (modality == Modality::kText) return {1, max_tokens};
  return patch_grid(input_h, input_w, patch);
}

int EncoderConfig::positions() const { return grid().tokens(); }

void EncoderConfig::validate() const {
  if (width <= 0 || layers < 0 || heads <= 0 || mlp_ratio <= 0 || embed_dim <= 0)
    throw Error("encoder config: sizes must be positive");
  if (width % heads != 0) throw Error("encoder config: width must be divisible by heads");
  if (modality == Modality::kText) {
    if (vocab_size <= 0 || max_tokens <= 0) throw Error("encoder config: text needs vocab and max_tokens");
  } else {
    patch.validate();
    if (patch.embed_dim != width) throw Error("encoder config: patch embed_dim must equal width");
    if (modality == Modality::kAudio && patch.input_channels != 1)
      throw Error("encoder config: audio patch embedding takes one channel");
    (void)grid();
  }
}

// ---------------------------------------------------------------------------
// Positional interpolation and kernel adaptation

template <typename T>
PositionGrid<T> interpolate_positions(const PositionGrid<T>& src, int th, int tw) {
  if (th <= 0 || tw <= 0) throw Error("interpolate_positions: target dimension must be positive");
  if (src.rows < 2 || src.cols < 2) throw Error("interpolate_positions: source grid must be at least 2x2");
  if (src.grid.rows() != src.rows * src.cols) throw Error("interpolate_positions: grid size mismatch");
  PositionGrid<T> out;
  out.start = src.start;
  out.rows = th;
  out.cols = tw;
  if (th == src.rows && tw == src.cols) {
    out.grid = src.grid;
    return out;
  }
  out.grid.resize(static_cast<Eigen::Index>(th) * tw, src.grid.cols());
  auto coord = [](int i, int target, int source, int& lo, double& frac) {
    const double pos = target == 1 ? 0.0 : static_cast<double>(i) * (source - 1) / (target - 1);
    lo = std::min(static_cast<int>(std::floor(pos)), source - 2);
    frac = pos - lo;
  };
  for (int r = 0; r < th; ++r) {
    int r0;
    double fr;
    coord(r, th, src.rows, r0, fr);
    for (int c = 0; c < tw; ++c) {
      int c0;
      double fc;
      coord(c, tw, src.cols, c0, fc);
      auto at = [&](int rr, int cc) { return src.grid.row(static_cast<Eigen::Index>(rr) * src.cols + cc); };
      const T w00 = static_cast<T>((1 - fr) * (1 - fc)), w01 = static_cast<T>((1 - fr) * fc);
      const T w10 = static_cast<T>(fr * (1 - fc)), w11 = static_cast<T>(fr * fc);
      auto row = out.grid.row(static_cast<Eigen::Index>(r) * tw + c);
      row = w00 * at(r0, c0) + w01 * at(r0, c0 + 1) + w10 * at(r0 + 1, c0) + w11 * at(r0 + 1, c0 + 1);
      // Exact copies where the target lands on a source node.
      if (fr == 0.0 && fc == 0.0) row = at(r0, c0);
      else if (fr == 1.0 && fc == 0.0) row = at(r0 + 1, c0);
      else if (fr == 0.0 && fc == 1.0) row = at(r0, c0 + 1);
      else if (fr == 1.0 && fc == 1.0) row = at(r0 + 1, c0 + 1);
    }
  }
  return out;
}

template <typename T>
Mat<T> adapt_kernel_channels(const Mat<T>& weights, int in_channels) {
  if (in_channels <= 0 || weights.cols() % in_channels != 0)
    throw Error("adapt_kernel_channels: column count is not a multiple of the channel count");
  const Eigen::Index per = weights.cols() / in_channels;
  Mat<T> out = Mat<T>::Zero(weights.rows(), per);
  for (int c = 0; c < in_channels; ++c) out += weights.middleCols(c * per, per);
  out /= static_cast<T>(in_channels);
  return out;
}

// ---------------------------------------------------------------------------
// Layer math. All activations are (tokens x features), one row per token.

namespace {

template <typename T>
constexpr T kNormEps = T(1e-5);

template <typename T>
void norm_forward(const Mat<T>& x, ConstMatMap<T> g, ConstMatMap<T> b,
                  typename ModalEncoder<T>::NormCache& cache, Mat<T>& y) {
  const Eigen::Index n = x.rows(), w = x.cols();
  cache.xhat.resize(n, w);
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    const T rstd = T(1) / std::sqrt(var + kNormEps<T>);
    cache.rstd[i] = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mu) * rstd;
  }
  y = (cache.xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

template <typename T>
Mat<T> norm_backward(const Mat<T>& dy, ConstMatMap<T> g,
                     const typename ModalEncoder<T>::NormCache& cache, T* dg, T* db) {
  const Eigen::Index n = dy.rows(), w = dy.cols();
  if (dg) {
    Eigen::Map<RowVec<T>>(dg, w) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    Eigen::Map<RowVec<T>>(db, w) += dy.colwise().sum();
  }
  Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  Mat<T> dx(n, w);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd[i] * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

// CLIP's "quick" GELU: x * sigmoid(1.702 x).
template <typename T>
T qgelu(T x) {
  return x / (T(1) + std::exp(T(-1.702) * x));
}

template <typename T>
T qgelu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(T(-1.702) * x));
  return s + T(1.702) * x * s * (T(1) - s);
}

template <typename T>
void softmax_rows(Mat<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
void ModalEncoder<T>::build_layout() {
  cfg_.validate();
  layout_ = ParamLayout();
  const int w = cfg_.width;
  if (cfg_.modality == Modality::kText) {
    slots_.embed = layout_.add("token_embedding", cfg_.vocab_size, w, false);
  } else {
    const auto& p = cfg_.patch;
    slots_.embed = layout_.add("patch.weight", w, p.input_channels * p.kernel_h * p.kernel_w, false);
  }
  slots_.cls = layout_.add("class_embedding", 1, w, true);
  slots_.pos = layout_.add("positional", 1 + cfg_.positions(), w, false);
  slots_.ln_pre_g = layout_.add("ln_pre.weight", 1, w, true);
  slots_.ln_pre_b = layout_.add("ln_pre.bias", 1, w, true);
  slots_.blocks.clear();
  const int hid = w * cfg_.mlp_ratio;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    BlockSlots b{};
    b.ln1_g = layout_.add(pre + "ln1.weight", 1, w, true);
    b.ln1_b = layout_.add(pre + "ln1.bias", 1, w, true);
    b.qkv_w = layout_.add(pre + "attn.in_proj.weight", 3 * w, w, false);
    b.qkv_b = layout_.add(pre + "attn.in_proj.bias", 1, 3 * w, true);
    b.out_w = layout_.add(pre + "attn.out_proj.weight", w, w, false);
    b.out_b = layout_.add(pre + "attn.out_proj.bias", 1, w, true);
    b.ln2_g = layout_.add(pre + "ln2.weight", 1, w, true);
    b.ln2_b = layout_.add(pre + "ln2.bias", 1, w, true);
    b.fc1_w = layout_.add(pre + "mlp.fc1.weight", hid, w, false);
    b.fc1_b = layout_.add(pre + "mlp.fc1.bias", 1, hid, true);
    b.fc2_w = layout_.add(pre + "mlp.fc2.weight", w, hid, false);
    b.fc2_b = layout_.add(pre + "mlp.fc2.bias", 1, w, true);
    slots_.blocks.push_back(b);
  }
  slots_.ln_post_g = layout_.add("ln_post.weight", 1, w, true);
  slots_.ln_post_b = layout_.add("ln_post.bias", 1, w, true);
  slots_.proj = layout_.add("proj", cfg_.embed_dim, w, false);
}

template <typename T>
ModalEncoder<T>::ModalEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  build_layout();
  params_.assign(layout_.total(), T(0));
  Rng rng = Rng::stream(seed, "init", static_cast<std::uint64_t>(cfg.modality));
  auto fill = [&](int slot, double std) {
    auto v = view(params_.data(), layout_[slot]);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>(std * rng.normal());
  };
  auto ones = [&](int slot) { view(params_.data(), layout_[slot]).setOnes(); };
  const double w = cfg_.width;
  const double resid = 1.0 / std::sqrt(2.0 * std::max(1, cfg_.layers));
  fill(slots_.embed, cfg_.modality == Modality::kText
                         ? 0.5
                         : 1.0 / std::sqrt(static_cast<double>(layout_[slots_.embed].cols)));
  fill(slots_.cls, 0.5);
  fill(slots_.pos, 0.1);
  ones(slots_.ln_pre_g);
  for (const auto& b : slots_.blocks) {
    ones(b.ln1_g);
    ones(b.ln2_g);
    fill(b.qkv_w, 1.0 / std::sqrt(w));
    fill(b.out_w, resid / std::sqrt(w));
    fill(b.fc1_w, 1.0 / std::sqrt(w));
    fill(b.fc2_w, resid / std::sqrt(w * cfg_.mlp_ratio));
  }
  ones(slots_.ln_post_g);
  fill(slots_.proj, 1.0 / std::sqrt(w));
}

template <typename T>
ModalEncoder<T>::ModalEncoder(const EncoderConfig& cfg, ParamBuffer<T> params)
    : cfg_(cfg), params_(std::move(params)) {
  build_layout();
  if (params_.size() != layout_.total())
    throw Error("encoder: parameter buffer has " + std::to_string(params_.size()) +
                " values, layout expects " + std::to_string(layout_.total()));
}

template <typename T>
Mat<T> ModalEncoder<T>::extract_patches(const ImageTensor& img) const {
  const auto& p = cfg_.patch;
  if (img.channels != p.input_channels)
    throw Error("encode: expected " + std::to_string(p.input_channels) + " input channels, got " +
                std::to_string(img.channels));
  if (img.height < p.kernel_h || img.width < p.kernel_w)
    throw Error("encode: input " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                " smaller than the patch kernel");
  const GridShape got = patch_grid(img.height, img.width, p);
  const GridShape want = cfg_.grid();
  if (!(got == want)) {
    std::ostringstream ss;
    ss << "encode: shape mismatch, expected grid " << want.rows << "x" << want.cols << " got "
       << got.rows << "x" << got.cols << " (input " << img.height << "x" << img.width
       << "); resize positions first";
    throw Error(ss.str());
  }
  const int k = p.input_channels * p.kernel_h * p.kernel_w;
  Mat<T> out(got.tokens(), k);
  for (int r = 0; r < got.rows; ++r) {
    for (int c = 0; c < got.cols; ++c) {
      T* dst = out.row(r * got.cols + c).data();
      for (int ch = 0; ch < p.input_channels; ++ch)
        for (int i = 0; i < p.kernel_h; ++i) {
          const float* src = &img.data[(std::size_t(ch) * img.height + r * p.stride_h + i) * img.width +
                                       c * p.stride_w];
          for (int j = 0; j < p.kernel_w; ++j) *dst++ = static_cast<T>(src[j]);
        }
    }
  }
  return out;
}

template <typename T>
RowVec<T> ModalEncoder<T>::encode(const FbankSpectrogram& spec) const {
  const ImageTensor t = ImageTensor::from_spectrogram(spec);
  return forward(EncoderInput::of(t));
}

template <typename T>
RowVec<T> ModalEncoder<T>::forward(const EncoderInput& in, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  const T* P = params_.data();
  const int w = cfg_.width;
  const int heads = cfg_.heads;
  const int hd = w / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  Mat<T> x;
  if (cfg_.modality == Modality::kText) {
    if (in.image) throw Error("encode: text encoder expects tokens");
    const int n = static_cast<int>(in.tokens.size());
    if (n == 0) throw Error("encode: empty token sequence");
    if (n > cfg_.max_tokens)
      throw Error("encode: token sequence of length " + std::to_string(n) + " exceeds max_tokens " +
                  std::to_string(cfg_.max_tokens));
    c.tokens.assign(in.tokens.begin(), in.tokens.end());
    auto emb = view(P, layout_[slots_.embed]);
    x.resize(n + 1, w);
    for (int i = 0; i < n; ++i) {
      const int t = in.tokens[i];
      if (t < 0 || t >= cfg_.vocab_size) throw Error("encode: token id out of range");
      x.row(i + 1) = emb.row(t);
    }
  } else {
    if (!in.image) throw Error("encode: patch encoder expects an image/spectrogram tensor");
    c.patches = extract_patches(*in.image);
    x.resize(c.patches.rows() + 1, w);
    x.bottomRows(c.patches.rows()).noalias() = c.patches * view(P, layout_[slots_.embed]).transpose();
  }
  const Eigen::Index n1 = x.rows();
  x.row(0) = view(P, layout_[slots_.cls]);
  x += view(P, layout_[slots_.pos]).topRows(n1);

  Mat<T> h;
  norm_forward<T>(x, view(P, layout_[slots_.ln_pre_g]), view(P, layout_[slots_.ln_pre_b]), c.ln_pre, h);

  c.blocks.resize(cfg_.layers);
  for (int l = 0; l < cfg_.layers; ++l) {
    const BlockSlots& s = slots_.blocks[l];
    BlockCache& bc = c.blocks[l];
    // Only the sequence-start row feeds the output, so the last block
    // computes attention queries and the MLP for that row alone.
    const Eigen::Index q = (l == cfg_.layers - 1) ? 1 : h.rows();
    const Eigen::Index n = h.rows();
    norm_forward<T>(h, view(P, layout_[s.ln1_g]), view(P, layout_[s.ln1_b]), bc.ln1, bc.attn_in);
    bc.qkv.noalias() = bc.attn_in * view(P, layout_[s.qkv_w]).transpose();
    bc.qkv.rowwise() += view(P, layout_[s.qkv_b]).row(0);
    bc.probs.resize(heads);
    bc.attn_cat.resize(q, w);
    for (int hh = 0; hh < heads; ++hh) {
      Mat<T>& pr = bc.probs[hh];
      pr.noalias() = bc.qkv.block(0, hh * hd, q, hd) * bc.qkv.block(0, w + hh * hd, n, hd).transpose();
      pr *= scale;
      softmax_rows(pr);
      bc.attn_cat.middleCols(hh * hd, hd).noalias() = pr * bc.qkv.block(0, 2 * w + hh * hd, n, hd);
    }
    Mat<T> xm = h.topRows(q);
    xm.noalias() += bc.attn_cat * view(P, layout_[s.out_w]).transpose();
    xm.rowwise() += view(P, layout_[s.out_b]).row(0);
    norm_forward<T>(xm, view(P, layout_[s.ln2_g]), view(P, layout_[s.ln2_b]), bc.ln2, bc.mlp_in);
    bc.hidden.noalias() = bc.mlp_in * view(P, layout_[s.fc1_w]).transpose();
    bc.hidden.rowwise() += view(P, layout_[s.fc1_b]).row(0);
    bc.act = bc.hidden.unaryExpr([](T v) { return qgelu(v); });
    xm.noalias() += bc.act * view(P, layout_[s.fc2_w]).transpose();
    xm.rowwise() += view(P, layout_[s.fc2_b]).row(0);
    h = std::move(xm);
  }

  Mat<T> first = h.topRows(1);
  Mat<T> pooled;
  norm_forward<T>(first, view(P, layout_[slots_.ln_post_g]), view(P, layout_[slots_.ln_post_b]), c.ln_post,
                  pooled);
  c.pooled = pooled.row(0);
  c.z.noalias() = c.pooled * view(P, layout_[slots_.proj]).transpose();
  c.z_norm = c.z.norm();
  if (!(c.z_norm > T(0)) || !std::isfinite(static_cast<double>(c.z_norm)))
    throw Error("encode: degenerate projection output");
  c.out = c.z / c.z_norm;
  return c.out;
}

template <typename T>
void ModalEncoder<T>::backward(const Cache& c, const RowVec<T>& d_out, T* grad,
                               int first_trainable_block) const {
  const T* P = params_.data();
  const int w = cfg_.width;
  const int heads = cfg_.heads;
  const int hd = w / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  auto g = [&](int slot) { return grad + layout_[slot].offset; };

  // Through the L2 normalization.
  const RowVec<T> dz = (d_out - c.out * c.out.dot(d_out)) / c.z_norm;
  view(grad, layout_[slots_.proj]).noalias() += dz.transpose() * c.pooled;
  Mat<T> dpooled = dz * view(P, layout_[slots_.proj]);
  Mat<T> dh = norm_backward<T>(dpooled, view(P, layout_[slots_.ln_post_g]), c.ln_post, g(slots_.ln_post_g),
                               g(slots_.ln_post_b));

  for (int l = cfg_.layers - 1; l >= 0; --l) {
    if (l < first_trainable_block) return;
    const BlockSlots& s = slots_.blocks[l];
    const BlockCache& bc = c.blocks[l];
    const Eigen::Index q = dh.rows();
    const Eigen::Index n = bc.attn_in.rows();

    // MLP branch.
    view(grad, layout_[s.fc2_w]).noalias() += dh.transpose() * bc.act;
    Eigen::Map<RowVec<T>>(g(s.fc2_b), w) += dh.colwise().sum();
    Mat<T> dhid = dh * view(P, layout_[s.fc2_w]);
    for (Eigen::Index i = 0; i < dhid.size(); ++i) dhid.data()[i] *= qgelu_grad(bc.hidden.data()[i]);
    view(grad, layout_[s.fc1_w]).noalias() += dhid.transpose() * bc.mlp_in;
    Eigen::Map<RowVec<T>>(g(s.fc1_b), dhid.cols()) += dhid.colwise().sum();
    Mat<T> dm = dhid * view(P, layout_[s.fc1_w]);
    Mat<T> dxm = dh + norm_backward<T>(dm, view(P, layout_[s.ln2_g]), bc.ln2, g(s.ln2_g), g(s.ln2_b));

    // Attention branch.
    view(grad, layout_[s.out_w]).noalias() += dxm.transpose() * bc.attn_cat;
    Eigen::Map<RowVec<T>>(g(s.out_b), w) += dxm.colwise().sum();
    Mat<T> dcat = dxm * view(P, layout_[s.out_w]);
    Mat<T> dqkv = Mat<T>::Zero(n, 3 * w);
    for (int hh = 0; hh < heads; ++hh) {
      const Mat<T>& pr = bc.probs[hh];
      const auto Q = bc.qkv.block(0, hh * hd, q, hd);
      const auto K = bc.qkv.block(0, w + hh * hd, n, hd);
      const auto V = bc.qkv.block(0, 2 * w + hh * hd, n, hd);
      const auto dO = dcat.middleCols(hh * hd, hd);
      Mat<T> dp = dO * V.transpose();
      dqkv.block(0, 2 * w + hh * hd, n, hd).noalias() += pr.transpose() * dO;
      for (Eigen::Index i = 0; i < q; ++i) {
        const T dot = dp.row(i).dot(pr.row(i));
        dp.row(i) = pr.row(i).array() * (dp.row(i).array() - dot);
      }
      dp *= scale;
      dqkv.block(0, hh * hd, q, hd).noalias() += dp * K;
      dqkv.block(0, w + hh * hd, n, hd).noalias() += dp.transpose() * Q;
    }
    view(grad, layout_[s.qkv_w]).noalias() += dqkv.transpose() * bc.attn_in;
    Eigen::Map<RowVec<T>>(g(s.qkv_b), 3 * w) += dqkv.colwise().sum();
    Mat<T> da = dqkv * view(P, layout_[s.qkv_w]);
    Mat<T> dx = norm_backward<T>(da, view(P, layout_[s.ln1_g]), bc.ln1, g(s.ln1_g), g(s.ln1_b));
    dx.topRows(q) += dxm;
    dh = std::move(dx);
  }
  if (first_trainable_block > 0) return;

  Mat<T> dx = norm_backward<T>(dh, view(P, layout_[slots_.ln_pre_g]), c.ln_pre, g(slots_.ln_pre_g),
                               g(slots_.ln_pre_b));
  const Eigen::Index n1 = dx.rows();
  view(grad, layout_[slots_.pos]).topRows(n1) += dx;
  Eigen::Map<RowVec<T>>(g(slots_.cls), w) += dx.row(0);
  if (cfg_.modality == Modality::kText) {
    auto demb = view(grad, layout_[slots_.embed]);
    for (std::size_t i = 0; i < c.tokens.size(); ++i) demb.row(c.tokens[i]) += dx.row(i + 1);
  } else {
    view(grad, layout_[slots_.embed]).noalias() += dx.bottomRows(n1 - 1).transpose() * c.patches;
  }
}

template <typename T>
PositionGrid<T> ModalEncoder<T>::position_grid() const {
  auto pos = view(params_.data(), layout_[slots_.pos]);
  PositionGrid<T> g;
  const GridShape shape = cfg_.grid();
  g.rows = shape.rows;
  g.cols = shape.cols;
  g.start = pos.row(0);
  g.grid = pos.bottomRows(pos.rows() - 1);
  return g;
}

template <typename T>
ModalEncoder<T> ModalEncoder<T>::resized_for_input(int input_h, int input_w) const {
  if (cfg_.modality == Modality::kText) throw Error("resized_for_input: text encoders have no 2D grid");
  EncoderConfig cfg = cfg_;
  cfg.input_h = input_h;
  cfg.input_w = input_w;
  const GridShape target = cfg.grid();
  const PositionGrid<T> resized = interpolate_positions(position_grid(), target.rows, target.cols);
  ModalEncoder<T> out;
  out.cfg_ = cfg;
  out.build_layout();
  out.params_.assign(out.layout_.total(), T(0));
  out.frozen_ = frozen_;
  for (const auto& s : layout_.slots()) {
    const int j = out.layout_.find(s.name);
    if (j == out.slots_.pos) continue;
    view(out.params_.data(), out.layout_[j]) = view(params_.data(), s);
  }
  auto pos = view(out.params_.data(), out.layout_[out.slots_.pos]);
  pos.row(0) = resized.start;
  pos.bottomRows(pos.rows() - 1) = resized.grid;
  return out;
}

template <typename T>
ModalEncoder<T> init_audio_from_image(const ModalEncoder<T>& image, const EncoderConfig& audio) {
  const EncoderConfig& ic = image.config();
  if (ic.modality != Modality::kImage) throw Error("init_audio_from_image: source is not an image encoder");
  if (audio.modality != Modality::kAudio) throw Error("init_audio_from_image: target is not an audio config");
  audio.validate();
  if (ic.width != audio.width || ic.layers != audio.layers || ic.heads != audio.heads ||
      ic.mlp_ratio != audio.mlp_ratio || ic.embed_dim != audio.embed_dim)
    throw Error("init_audio_from_image: transformer dimension mismatch");
  if (ic.patch.kernel_h != audio.patch.kernel_h || ic.patch.kernel_w != audio.patch.kernel_w)
    throw Error("init_audio_from_image: patch kernel size mismatch");

  const GridShape target = audio.grid();
  const PositionGrid<T> pos = interpolate_positions(image.position_grid(), target.rows, target.cols);
  const auto& il = image.layout();
  const auto& ip = image.params();
  const Mat<T> kernel = adapt_kernel_channels<T>(Mat<T>(view(ip.data(), il[image.slots().embed])),
                                                 ic.patch.input_channels);

  // Every slot is overwritten below, so the seed is irrelevant.
  ModalEncoder<T> out(audio, std::uint64_t{0});
  auto& op = out.params();
  const auto& ol = out.layout();
  for (const auto& s : ol.slots()) {
    const int idx = ol.find(s.name);
    if (idx == out.slots().embed) {
      view(op.data(), s) = kernel;
    } else if (idx == out.slots().pos) {
      auto dst = view(op.data(), s);
      dst.row(0) = pos.start;
      dst.bottomRows(dst.rows() - 1) = pos.grid;
    } else {
      const int src = il.find(s.name);
      if (src < 0 || il[src].rows != s.rows || il[src].cols != s.cols)
        throw Error("init_audio_from_image: no matching source tensor for '" + s.name + "'");
      view(op.data(), s) = view(ip.data(), il[src]);
    }
  }
  return out;
}

template class ModalEncoder<float>;
template class ModalEncoder<double>;
template PositionGrid<float> interpolate_positions(const PositionGrid<float>&, int, int);
template PositionGrid<double> interpolate_positions(const PositionGrid<double>&, int, int);
template Mat<float> adapt_kernel_channels(const Mat<float>&, int);
template Mat<double> adapt_kernel_channels(const Mat<double>&, int);
template ModalEncoder<float> init_audio_from_image(const ModalEncoder<float>&, const EncoderConfig&);
template ModalEncoder<double> init_audio_from_image(const ModalEncoder<double>&, const EncoderConfig&);

}  // namespace pivotkit
