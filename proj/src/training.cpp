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

#include "pivotkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "pivotkit/parallel.hpp"

namespace pivotkit {

int sample_frame_index(std::size_t frame_count, FrameMode mode, Rng& rng) {
  if (frame_count == 0) throw Error("sample_frame: empty frame set");
  if (mode == FrameMode::kEval) {
    if (frame_count <= static_cast<std::size_t>(1)) return 0;
    return 1;
  }
  return static_cast<int>(rng.below(frame_count));
}

const ImageTensor& sample_frame(const std::vector<ImageTensor>& frames, FrameMode mode, Rng& rng) {
  return frames[sample_frame_index(frames.size(), mode, rng)];
}

double OptimizerSpec::lr_factor(int epoch, int step, int steps_per_epoch) const {
  double f = 1.0;
  if (epoch < warmup_epochs && steps_per_epoch > 0)
    f = static_cast<double>(epoch * steps_per_epoch + step + 1) / (static_cast<double>(warmup_epochs) * steps_per_epoch);
  for (int m : milestones)
    if (epoch >= m) f *= gamma;
  return f;
}

Optimizer::Optimizer(OptimizerSpec spec, OptimizerState& state) : spec_(std::move(spec)), state_(state) {
  const char* kind = spec_.kind == OptimizerKind::kAdam ? "adam" : "sgd";
  if (state_.kind.empty()) state_.kind = kind;
  if (state_.kind != kind) throw Error("optimizer state was written by " + state_.kind + ", not " + kind);
}

void Optimizer::begin_step() { ++state_.step; }

void Optimizer::update(const std::string& name, const ParamLayout& layout, ParamBuffer<float>& params,
                       const ParamBuffer<float>& grad, double lr_factor, const std::vector<char>* slot_mask) {
  if (grad.size() != params.size() || params.size() != layout.total())
    throw Error("optimizer: gradient size does not match " + name);
  const bool adam = spec_.kind == OptimizerKind::kAdam;
  auto& m = state_.buffers[name + (adam ? ".m" : ".mom")];
  if (m.empty()) m.assign(params.size(), 0.0f);
  ParamBuffer<float>* v = nullptr;
  if (adam) {
    v = &state_.buffers[name + ".v"];
    if (v->empty()) v->assign(params.size(), 0.0f);
  }
  const double t = static_cast<double>(state_.step);
  const double c1 = adam ? 1.0 - std::pow(spec_.beta1, t) : 1.0;
  const double c2 = adam ? 1.0 - std::pow(spec_.beta2, t) : 1.0;
  for (std::size_t si = 0; si < layout.slots().size(); ++si) {
    if (slot_mask && !(*slot_mask)[si]) continue;
    const ParamSlot& s = layout.slots()[si];
    const double lr = (s.bias_group ? spec_.lr_biases : spec_.lr_weights) * lr_factor;
    const double decay = s.bias_group ? 0.0 : spec_.weight_decay;
    for (std::size_t k = s.offset; k < s.offset + s.size(); ++k) {
      const double g = grad[k];
      double p = params[k];
      if (adam) {
        const double mk = spec_.beta1 * m[k] + (1.0 - spec_.beta1) * g;
        const double vk = spec_.beta2 * (*v)[k] + (1.0 - spec_.beta2) * g * g;
        m[k] = static_cast<float>(mk);
        (*v)[k] = static_cast<float>(vk);
        p -= lr * ((mk / c1) / (std::sqrt(vk / c2) + spec_.eps) + decay * p);
      } else {
        const double mk = spec_.momentum * m[k] + g;
        m[k] = static_cast<float>(mk);
        p -= lr * (mk + decay * p);
      }
      params[k] = static_cast<float>(p);
    }
  }
}

void Optimizer::update_scalar(const std::string& name, double& value, double grad, double lr_factor) {
  const double lr = spec_.lr_biases * lr_factor;
  if (spec_.kind == OptimizerKind::kAdam) {
    double& m = state_.scalars[name + ".m"];
    double& v = state_.scalars[name + ".v"];
    const double t = static_cast<double>(state_.step);
    m = spec_.beta1 * m + (1.0 - spec_.beta1) * grad;
    v = spec_.beta2 * v + (1.0 - spec_.beta2) * grad * grad;
    value -= lr * (m / (1.0 - std::pow(spec_.beta1, t))) / (std::sqrt(v / (1.0 - std::pow(spec_.beta2, t))) + spec_.eps);
  } else {
    double& m = state_.scalars[name + ".mom"];
    m = spec_.momentum * m + grad;
    value -= lr * m;
  }
}

void StageConfig::validate() const {
  if (batch_size < 2) throw Error("stage config: batch_size must be at least 2");
  if (epochs < 0) throw Error("stage config: epochs must be non-negative");
  if (!(mask_time >= 0 && mask_time < 1 && mask_freq >= 0 && mask_freq < 1))
    throw Error("stage config: mask fractions must lie in [0, 1)");
  if (bibi && stage != StageKind::kVA) throw Error("stage config: bibi applies to the VA stage only");
  if (vat && stage != StageKind::kAT) throw Error("stage config: vat applies to the AT stage only");
  switch (stage) {
    case StageKind::kVT:
      if (freeze_image && freeze_text) throw Error("stage config: VT with both towers frozen trains nothing");
      break;
    case StageKind::kVA:
      if (!bibi && !freeze_image) throw Error("stage config: VA stage requires the image encoder frozen");
      if (freeze_audio) throw Error("stage config: VA stage requires the audio encoder trainable");
      break;
    case StageKind::kAT:
      if (!freeze_text) throw Error("stage config: AT stage requires the text encoder frozen");
      if (!freeze_image) throw Error("stage config: AT stage requires the image encoder frozen");
      if (freeze_audio) throw Error("stage config: AT stage requires the audio encoder trainable");
      break;
    case StageKind::kCLF:
      break;
  }
}

// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(int embed_dim, int num_classes, HeadMode mode, int trainable_layers,
                               std::uint64_t seed)
    : num_classes_(num_classes), mode_(mode), trainable_layers_(trainable_layers) {
  if (num_classes < 2) throw Error("classifier head needs at least 2 classes");
  if (embed_dim <= 0) throw Error("classifier head needs a positive embedding width");
  layout_.add("head.weight", embed_dim, num_classes, false);
  layout_.add("head.bias", 1, num_classes, true);
  params_.assign(layout_.total(), 0.0f);
  Rng rng = Rng::stream(seed, "init/head");
  const double sd = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  const ParamSlot& w = layout_[0];
  for (std::size_t k = w.offset; k < w.offset + w.size(); ++k) params_[k] = static_cast<float>(sd * rng.normal());
}

RowVec<float> ClassifierHead::logits(const RowVec<float>& e) const {
  const auto w = view(params_.data(), layout_[0]);
  const auto b = view(params_.data(), layout_[1]);
  return e * w + b;
}

double ClassifierHead::loss(const RowVec<float>& e, const std::vector<int>& labels, float* head_grad,
                            RowVec<float>* d_embedding) const {
  if (labels.empty()) throw Error("classifier loss: item has no labels");
  for (int c : labels)
    if (c < 0 || c >= num_classes_) throw Error("classifier loss: label out of range");
  const RowVec<float> z = logits(e);
  Eigen::RowVectorXd dz(num_classes_);
  double value = 0.0;
  if (mode_ == HeadMode::kMultiClass) {
    if (labels.size() != 1) throw Error("classifier loss: multi-class items need exactly one label");
    const double mx = z.cast<double>().maxCoeff();
    double sum = 0.0;
    for (int c = 0; c < num_classes_; ++c) sum += std::exp(z[c] - mx);
    const double lse = mx + std::log(sum);
    value = lse - z[labels[0]];
    for (int c = 0; c < num_classes_; ++c) dz[c] = std::exp(z[c] - lse);
    dz[labels[0]] -= 1.0;
  } else {
    std::vector<char> positive(num_classes_, 0);
    for (int c : labels) positive[c] = 1;
    for (int c = 0; c < num_classes_; ++c) {
      const double x = z[c];
      // log(1 + e^x) without overflow.
      const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      value += positive[c] ? softplus - x : softplus;
      dz[c] = 1.0 / (1.0 + std::exp(-x)) - positive[c];
    }
  }
  if (head_grad) {
    auto gw = view(head_grad, layout_[0]);
    auto gb = view(head_grad, layout_[1]);
    const RowVec<float> dzf = dz.cast<float>();
    gw.noalias() += e.transpose() * dzf;
    gb += dzf;
  }
  if (d_embedding) {
    const auto w = view(params_.data(), layout_[0]);
    *d_embedding = (dz.cast<float>() * w.transpose());
  }
  return value;
}

int ClassifierHead::predict(const RowVec<float>& e) const {
  Eigen::Index best = 0;
  logits(e).maxCoeff(&best);
  return static_cast<int>(best);
}

ClassifierHead attach_classifier_head(const Encoder& encoder, int num_classes, HeadMode mode, int trainable_layers,
                                      std::uint64_t seed) {
  if (trainable_layers < 0 || trainable_layers > encoder.config().layers)
    throw Error("classifier head: trainable layers must lie in [0, " + std::to_string(encoder.config().layers) + "]");
  return ClassifierHead(encoder.config().embed_dim, num_classes, mode, trainable_layers, seed);
}

// ---------------------------------------------------------------------------

namespace {

using json = nlohmann::json;

int first_block_for(const Encoder& enc, int trainable_blocks) {
  if (trainable_blocks < 0) return 0;
  if (trainable_blocks > enc.config().layers)
    throw Error("stage config: trainable_blocks exceeds the encoder depth");
  return enc.config().layers - trainable_blocks;
}

// Slots the backward pass reaches when training from `first_block` on.
std::vector<char> trainable_slots(const Encoder& enc, int first_block) {
  std::vector<char> keep(enc.layout().slots().size(), first_block == 0);
  if (first_block == 0) return keep;
  const auto& s = enc.slots();
  for (int l = first_block; l < enc.config().layers; ++l) {
    const auto& b = s.blocks[l];
    for (int i : {b.ln1_g, b.ln1_b, b.qkv_w, b.qkv_b, b.out_w, b.out_b, b.ln2_g, b.ln2_b, b.fc1_w, b.fc1_b, b.fc2_w,
                  b.fc2_b})
      keep[i] = 1;
  }
  for (int i : {s.ln_post_g, s.ln_post_b, s.proj}) keep[i] = 1;
  return keep;
}

struct Batches {
  std::vector<std::vector<int>> items;
};

Batches make_batches(int n, int batch_size, Rng rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  Batches out;
  for (int b = 0; b < n; b += batch_size) {
    const int e = std::min(n, b + batch_size);
    if (e - b < 2) break;  // an InfoNCE batch needs negatives
    out.items.emplace_back(order.begin() + b, order.begin() + e);
  }
  return out;
}

ImageTensor masked(const ImageTensor& spec, const StageConfig& cfg, Rng& rng) {
  const MaskDraw m = draw_mask(spec.height, spec.width, cfg.mask_time, cfg.mask_freq, rng);
  ImageTensor out = spec;
  Eigen::Map<MatF> values(out.data.data(), out.height, out.width);
  MatF tmp = values;
  apply_mask(tmp, m);
  values = tmp;
  return out;
}

Temperature& stage_temperature(TriModel& model, StageKind s) {
  switch (s) {
    case StageKind::kVT:
      return model.vt_temp;
    case StageKind::kVA:
      return model.va_temp;
    default:
      return model.at_temp;
  }
}

Encoder& require(std::optional<Encoder>& enc, const char* what) {
  if (!enc) throw Error(std::string("run_stage: model has no ") + what + " encoder");
  return *enc;
}

class StepLog {
 public:
  StepLog(const std::filesystem::path& path, bool append) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw Error("cannot open training log " + path.string());
  }
  void write(StageKind stage, int epoch, int step, double loss, double tau) {
    if (!out_.is_open()) return;
    json j = {{"stage", stage_name(stage)}, {"epoch", epoch}, {"step", step}, {"loss", loss}, {"tau", tau}};
    out_ << j.dump() << '\n';
  }

 private:
  std::ofstream out_;
};

Mat<float> gather_rows(const Mat<float>& table, const std::vector<int>& rows) {
  Mat<float> out(rows.size(), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = table.row(rows[i]);
  return out;
}

// Everything one stage run needs between steps.
struct Runner {
  const StageConfig& cfg;
  const StageData& data;
  TriModel& model;
  ClassifierHead* head;
  OptimizerState opt_state;
  std::optional<Optimizer> opt;
  MatF frame_table;    // frozen image embeddings, one row per (record, frame)
  MatF caption_table;  // frozen caption embeddings for AT pairs
  std::vector<int> frame_base;
  std::vector<int> at_frame_base;
  MatF at_frame_table;

  void apply(const char* name, Encoder& enc, int first_block, const ParamBuffer<float>& grad, double factor) {
    if (first_block == 0) {
      opt->update(name, enc.layout(), enc.params(), grad, factor);
    } else {
      const std::vector<char> mask = trainable_slots(enc, first_block);
      opt->update(name, enc.layout(), enc.params(), grad, factor, &mask);
    }
  }

  void update_temperature(Temperature& t, const std::string& name, double grad, double factor) {
    if (!t.learnable) return;
    opt->update_scalar(name, t.log_scale, grad, factor);
    t.log_scale = std::min(t.log_scale, std::log(1.0 / t.min_tau));
  }

  static MatF embed_frames(const Encoder& image, const std::vector<const std::vector<ImageTensor>*>& sets,
                           std::vector<int>& base) {
    base.assign(sets.size() + 1, 0);
    for (std::size_t i = 0; i < sets.size(); ++i) base[i + 1] = base[i] + static_cast<int>(sets[i]->size());
    std::vector<EncoderInput> inputs;
    inputs.reserve(base.back());
    for (const auto* s : sets)
      for (const auto& f : *s) inputs.push_back(EncoderInput::of(f));
    return embed_all(image, std::span<const EncoderInput>(inputs));
  }
};

}  // namespace

StageResult run_stage(const StageConfig& cfg, const StageData& data, TriModel& model, ClassifierHead* head) {
  cfg.validate();
  const StageKind stage = cfg.stage;
  const std::string sname = stage_name(stage);

  int start_epoch = 0;
  Runner r{cfg, data, model, head, {}, std::nullopt, {}, {}, {}, {}, {}};
  if (!cfg.resume_from.empty()) {
    TriModel resumed = load_checkpoint(cfg.resume_from, &r.opt_state);
    if (resumed.stage != sname) throw Error("resume: checkpoint was written by stage " + resumed.stage);
    model = std::move(resumed);
    start_epoch = model.epoch;
    if (stage == StageKind::kCLF) {
      if (!head) throw Error("run_stage: CLF stage needs a classifier head");
      auto it = r.opt_state.buffers.find("head.params");
      if (it == r.opt_state.buffers.end() || it->second.size() != head->params().size())
        throw Error("resume: checkpoint has no matching classifier head");
      head->params() = it->second;
    }
  }
  r.opt.emplace(cfg.optimizer, r.opt_state);

  // Towers and freeze flags.
  Encoder* image = model.image ? &*model.image : nullptr;
  Encoder* audio = model.audio ? &*model.audio : nullptr;
  Encoder* text = model.text ? &*model.text : nullptr;
  switch (stage) {
    case StageKind::kVT:
      require(model.image, "image");
      require(model.text, "text");
      if (data.vt_images.size() != data.vt_captions.size()) throw Error("run_stage: VT images and captions differ in count");
      break;
    case StageKind::kVA:
      require(model.image, "image");
      require(model.audio, "audio");
      if (data.va_frames.size() != data.va_audio.size()) throw Error("run_stage: VA frames and audio differ in count");
      if (cfg.bibi) {
        require(model.text, "text");
        if (data.vt_images.size() != data.vt_captions.size())
          throw Error("run_stage: VT images and captions differ in count");
      }
      break;
    case StageKind::kAT:
      require(model.audio, "audio");
      require(model.text, "text");
      if (data.at_audio.size() != data.at_captions.size()) throw Error("run_stage: AT audio and captions differ in count");
      if (cfg.vat) {
        require(model.image, "image");
        if (data.at_frames.size() != data.at_audio.size()) throw Error("run_stage: VAT needs frames for every AT pair");
      }
      break;
    case StageKind::kCLF:
      require(model.audio, "audio");
      if (!head) throw Error("run_stage: CLF stage needs a classifier head");
      if (data.clf_audio.size() != data.clf_labels.size()) throw Error("run_stage: CLF audio and labels differ in count");
      break;
  }
  if (image) image->set_frozen(cfg.freeze_image);
  if (audio) audio->set_frozen(cfg.freeze_audio);
  if (text) text->set_frozen(cfg.freeze_text);
  if (stage == StageKind::kCLF) audio->set_frozen(head->trainable_layers() == 0);

  if (cfg.fixed_tau > 0 && stage != StageKind::kCLF) {
    stage_temperature(model, stage) = Temperature::fixed(cfg.fixed_tau);
    if (cfg.vat) model.va_temp = Temperature::fixed(cfg.fixed_tau);
  }

  StageResult result;
  if (start_epoch >= cfg.epochs) return result;

  // Frozen towers never change during the stage, so embed their inputs once.
  if (stage == StageKind::kVA && !cfg.bibi) r.frame_table = Runner::embed_frames(*image, data.va_frames, r.frame_base);
  if (stage == StageKind::kAT) {
    std::vector<EncoderInput> caps;
    for (const auto* t : data.at_captions) caps.push_back(EncoderInput::of(std::span<const int>(*t)));
    r.caption_table = embed_all(*text, std::span<const EncoderInput>(caps));
    if (cfg.vat) r.at_frame_table = Runner::embed_frames(*image, data.at_frames, r.at_frame_base);
  }

  // Trainable slices.
  auto trained_block = [&](const Encoder& enc) {
    return first_block_for(enc, stage == StageKind::kCLF ? head->trainable_layers() : cfg.trainable_blocks);
  };
  StepLog log(cfg.log_path, start_epoch > 0);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t seed = cfg.seed;
    Rng frame_rng = Rng::stream(seed, "frame/" + sname, epoch);
    Rng mask_rng = Rng::stream(seed, "mask/" + sname, epoch);
    Rng caption_rng = Rng::stream(seed, "vt-caption/" + sname, epoch);

    double loss_sum = 0.0;
    int steps = 0;
    auto finish_step = [&](double loss, double tau, int step) {
      loss_sum += loss;
      ++steps;
      log.write(stage, epoch, step, loss, tau);
    };

    // Shared VT step, used by VT and the VT half of bibi.
    auto vt_step = [&](const std::vector<int>& items, double factor, int step) {
      Temperature& temp = model.vt_temp;
      std::vector<EncoderInput> imgs, caps;
      for (int i : items) {
        imgs.push_back(EncoderInput::of(*data.vt_images[i]));
        const auto& set = *data.vt_captions[i];
        if (set.empty()) throw Error("run_stage: VT record without captions");
        caps.push_back(EncoderInput::of(std::span<const int>(set[caption_rng.below(set.size())])));
      }
      const int fi = image->frozen() ? 0 : trained_block(*image);
      const int ft = text->frozen() ? 0 : trained_block(*text);
      TowerBatch<float> a{image, imgs, nullptr, fi};
      TowerBatch<float> b{text, caps, nullptr, ft};
      StepResult<float> res = contrastive_step(a, b, temp);
      r.opt->begin_step();
      if (!res.grad_a.empty()) r.apply("image", *image, fi, res.grad_a, factor);
      if (!res.grad_b.empty()) r.apply("text", *text, ft, res.grad_b, factor);
      r.update_temperature(temp, "vt_temp", res.grad_log_scale, factor);
      finish_step(res.loss, temp.tau(), step);
    };

    auto audio_inputs = [&](const std::vector<const ImageTensor*>& src, const std::vector<int>& items,
                            std::vector<ImageTensor>& storage) {
      storage.clear();
      storage.reserve(items.size());
      for (int i : items) storage.push_back(cfg.augment ? masked(*src[i], cfg, mask_rng) : *src[i]);
      std::vector<EncoderInput> in;
      for (const auto& s : storage) in.push_back(EncoderInput::of(s));
      return in;
    };

    switch (stage) {
      case StageKind::kVT: {
        const Batches b = make_batches(static_cast<int>(data.vt_images.size()), cfg.batch_size,
                                       Rng::stream(seed, "order/" + sname, epoch));
        const int spe = static_cast<int>(b.items.size());
        for (int s = 0; s < spe; ++s)
          vt_step(b.items[s], cfg.optimizer.lr_factor(epoch, s, spe), s);
        break;
      }
      case StageKind::kVA: {
        const Batches va = make_batches(static_cast<int>(data.va_audio.size()), cfg.batch_size,
                                        Rng::stream(seed, "order/" + sname, epoch));
        Batches vt;
        if (cfg.bibi)
          vt = make_batches(static_cast<int>(data.vt_images.size()), cfg.batch_size,
                            Rng::stream(seed, "order/VT-in-" + sname, epoch));
        const int va_steps = static_cast<int>(va.items.size());
        const int spe = cfg.bibi ? va_steps + std::min(va_steps, static_cast<int>(vt.items.size())) : va_steps;
        int step = 0;
        for (int s = 0; s < va_steps; ++s) {
          const auto& items = va.items[s];
          const double factor = cfg.optimizer.lr_factor(epoch, step, spe);
          std::vector<ImageTensor> store;
          const auto ain = audio_inputs(data.va_audio, items, store);
          const int fa = trained_block(*audio);
          TowerBatch<float> at{audio, ain, nullptr, fa};
          StepResult<float> res;
          if (!cfg.bibi) {
            std::vector<int> rows;
            for (int i : items)
              rows.push_back(r.frame_base[i] + sample_frame_index(data.va_frames[i]->size(), FrameMode::kTrain, frame_rng));
            const MatF pre = gather_rows(r.frame_table, rows);
            TowerBatch<float> it{image, {}, &pre, 0};
            res = loss_va_frozen(it, at, model.va_temp);
          } else {
            std::vector<EncoderInput> imgs;
            for (int i : items) imgs.push_back(EncoderInput::of(sample_frame(*data.va_frames[i], FrameMode::kTrain, frame_rng)));
            const int fi = trained_block(*image);
            TowerBatch<float> it{image, imgs, nullptr, fi};
            res = contrastive_step(it, at, model.va_temp);
            r.opt->begin_step();
            r.apply("image", *image, fi, res.grad_a, factor);
            r.apply("audio", *audio, fa, res.grad_b, factor);
            r.update_temperature(model.va_temp, "va_temp", res.grad_log_scale, factor);
            finish_step(res.loss, model.va_temp.tau(), step++);
            if (s < static_cast<int>(vt.items.size())) {
              vt_step(vt.items[s], cfg.optimizer.lr_factor(epoch, step, spe), step);
              ++step;
            }
            continue;
          }
          r.opt->begin_step();
          r.apply("audio", *audio, fa, res.grad_b, factor);
          r.update_temperature(model.va_temp, "va_temp", res.grad_log_scale, factor);
          finish_step(res.loss, model.va_temp.tau(), step++);
        }
        break;
      }
      case StageKind::kAT: {
        const Batches b = make_batches(static_cast<int>(data.at_audio.size()), cfg.batch_size,
                                       Rng::stream(seed, "order/" + sname, epoch));
        const int spe = static_cast<int>(b.items.size());
        for (int s = 0; s < spe; ++s) {
          const auto& items = b.items[s];
          const double factor = cfg.optimizer.lr_factor(epoch, s, spe);
          std::vector<ImageTensor> store;
          const auto ain = audio_inputs(data.at_audio, items, store);
          const int fa = trained_block(*audio);
          const MatF caps = gather_rows(r.caption_table, items);
          TowerBatch<float> at{audio, ain, nullptr, fa};
          TowerBatch<float> tt{text, {}, &caps, 0};
          double loss = 0.0;
          ParamBuffer<float> grad;
          double g_at = 0.0, g_va = 0.0;
          if (!cfg.vat) {
            StepResult<float> res = loss_at(at, tt, model.at_temp);
            loss = res.loss;
            grad = std::move(res.grad_a);
            g_at = res.grad_log_scale;
          } else {
            // One audio forward serves both terms.
            const TowerForward<float> pass = forward_tower(at);
            const TowerForward<float> tpass = forward_tower(tt);
            std::vector<int> rows;
            for (int i : items)
              rows.push_back(r.at_frame_base[i] +
                             sample_frame_index(data.at_frames[i]->size(), FrameMode::kTrain, frame_rng));
            const MatF frames = gather_rows(r.at_frame_table, rows);
            const LossValue<float> lat = info_nce(pass.emb, tpass.emb, model.at_temp);
            const LossValue<float> lva = info_nce(frames, pass.emb, model.va_temp);
            loss = lat.value + lva.value;
            const MatF d_audio = lat.grad_a + lva.grad_b;
            grad = backward_tower(at, pass, d_audio);
            g_at = lat.grad_log_scale;
            g_va = lva.grad_log_scale;
          }
          r.opt->begin_step();
          r.apply("audio", *audio, fa, grad, factor);
          r.update_temperature(model.at_temp, "at_temp", g_at, factor);
          if (cfg.vat) r.update_temperature(model.va_temp, "va_temp", g_va, factor);
          finish_step(loss, model.at_temp.tau(), s);
        }
        break;
      }
      case StageKind::kCLF: {
        const Batches b = make_batches(static_cast<int>(data.clf_audio.size()), cfg.batch_size,
                                       Rng::stream(seed, "order/" + sname, epoch));
        const int spe = static_cast<int>(b.items.size());
        const int fa = trained_block(*audio);
        const bool tune_encoder = head->trainable_layers() > 0;
        for (int s = 0; s < spe; ++s) {
          const auto& items = b.items[s];
          const double factor = cfg.optimizer.lr_factor(epoch, s, spe);
          std::vector<ImageTensor> store;
          const auto ain = audio_inputs(data.clf_audio, items, store);
          TowerBatch<float> at{audio, ain, nullptr, fa};
          const TowerForward<float> pass = forward_tower(at);
          const int n = static_cast<int>(items.size());
          ParamBuffer<float> head_grad(head->params().size(), 0.0f);
          MatF d_emb(n, pass.emb.cols());
          double loss = 0.0;
          for (int i = 0; i < n; ++i) {
            RowVec<float> d;
            loss += head->loss(pass.emb.row(i), data.clf_labels[items[i]], head_grad.data(), &d);
            d_emb.row(i) = d;
          }
          const float inv = 1.0f / static_cast<float>(n);
          for (float& g : head_grad) g *= inv;
          d_emb *= inv;
          r.opt->begin_step();
          r.opt->update("head", head->layout(), head->params(), head_grad, factor);
          if (tune_encoder) {
            const ParamBuffer<float> g = backward_tower(at, pass, d_emb);
            r.apply("audio", *audio, fa, g, factor);
          }
          finish_step(loss / n, 0.0, s);
        }
        break;
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.steps = steps;
    st.mean_loss = steps ? loss_sum / steps : 0.0;
    st.tau = stage == StageKind::kCLF ? 0.0 : stage_temperature(model, stage).tau();
    result.epochs.push_back(st);

    model.stage = sname;
    model.epoch = epoch + 1;
    model.seed = cfg.seed;
    if (!cfg.checkpoint_dir.empty()) {
      if (stage == StageKind::kCLF) r.opt_state.buffers["head.params"] = head->params();
      char name[32];
      std::snprintf(name, sizeof(name), "epoch-%03d", epoch + 1);
      save_checkpoint(cfg.checkpoint_dir / name, model, &r.opt_state);
    }
  }
  return result;
}

}  // namespace pivotkit
