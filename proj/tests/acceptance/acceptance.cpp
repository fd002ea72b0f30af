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

// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--criteria 1,2,...] [--seeds 3] [--expect-fail 2] [--json out.json]
//
// Exit status is 1 when a criterion fails that is not listed in
// --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "pivotkit/binio.hpp"
#include "pivotkit/cli.hpp"
#include "pivotkit/config.hpp"
#include "pivotkit/curation.hpp"
#include "pivotkit/dataset.hpp"
#include "pivotkit/pipeline.hpp"

using namespace pivotkit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "" : "NOT ") + what);
  }
};

// ---- desk runs ------------------------------------------------------------

struct VtRecall {
  double i2t_r1, i2t_r10, t2i_r1, t2i_r10;
  bool operator==(const VtRecall&) const = default;
};

VtRecall vt_recall(const TriModel& m, const World& w) {
  const PairRetrieval r = vt_retrieval(m, w.eval);
  return {r.forward.recall_at(1), r.forward.recall_at(10), r.backward.recall_at(1), r.backward.recall_at(10)};
}

struct DeskRun {
  std::uint64_t seed = 0;
  double pivot_seconds = 0;  // world + VT + VA
  double chance_zero_shot = 0;
  double chance_a2t_r1 = 0;
  double none = 0, a2t_r1 = 0;
  std::map<std::string, double> curated;  // strategy -> zero-shot accuracy
  std::map<std::string, double> match;    // strategy -> class match of the pairs
  VtRecall vt_before{}, vt_after_va{};
  std::vector<VtRecall> vt_after_at;
  bool towers_unchanged = true;
  std::vector<ScalingPoint> ladder;
};

bool same_buffer(const Encoder& a, const Encoder& b) {
  return a.params().size() == b.params().size() &&
         std::equal(a.params().begin(), a.params().end(), b.params().begin());
}

// The default desk pipeline with the same seed streams as the CLI.
DeskRun desk_run(std::uint64_t seed, bool with_ladder) {
  DeskRun out;
  out.seed = seed;
  const auto t0 = Clock::now();
  const KeyValueConfig none;
  const World w = generate_world(world_config_from(none, seed));
  TriModel m = init_model(w, derive_seed(seed, "init"));
  run_stage(stage_config_from(none, StageKind::kVT, derive_seed(seed, "VT")), vt_stage_data(w), m);
  out.vt_before = vt_recall(m, w);
  const Encoder image0 = *m.image, text0 = *m.text;

  const CorpusStats stats = audio_corpus_stats(w);
  m.audio_stats = stats;
  const auto va_feats = audio_features(w, w.va, stats);
  init_audio_tower(m, w.config);
  run_stage(stage_config_from(none, StageKind::kVA, derive_seed(seed, "VA")), va_stage_data(w, va_feats), m);
  out.pivot_seconds = seconds_since(t0);
  out.vt_after_va = vt_recall(m, w);
  out.towers_unchanged = same_buffer(*m.image, image0) && same_buffer(*m.text, text0);

  const auto eval_feats = audio_features(w, w.eval, stats);
  const TaskMetrics base = audio_text_metrics(w, m, embed_audio(*m.audio, eval_feats), w.eval);
  out.none = base.zero_shot;
  out.a2t_r1 = base.a2t.recall_at(1);
  out.chance_zero_shot = 100.0 / w.config.num_classes;
  out.chance_a2t_r1 = static_cast<double>(w.config.captions_per_audio) / (w.eval.size() * w.config.captions_per_audio);

  m.image->set_frozen(true);
  m.text->set_frozen(true);
  const auto& gold = w.at_gold(StageKind::kAT);
  const auto gold_feats = audio_features(w, gold, stats);
  AudioIndex index;
  index.add(w.va, va_feats);
  index.add(gold, gold_feats);

  const CaptionPool pool = build_pool(w, PoolSource::kInDomain, 8, derive_seed(seed, "pool"), kImagePrompt);
  std::vector<std::string> ids;
  for (const auto& r : w.va) ids.push_back(r.id);
  Rng rng = Rng::stream(seed, "random-pairs");
  const std::vector<std::pair<std::string, std::vector<AlignmentPair>>> sets = {
      {"gold", gold_pairs(w, GoldMode::kCaption)},
      {"mined", mine_pairs(w.va, *m.image, *m.text, pool, 1)},
      {"random", random_pairs(ids, pool, rng)}};
  const StageConfig at_cfg = stage_config_from(none, StageKind::kAT, derive_seed(seed, "AT"));
  for (const auto& [name, pairs] : sets) {
    TriModel mm = m;
    run_stage(at_cfg, at_stage_data(pairs, index), mm);
    out.curated[name] = zero_shot_accuracy(w, mm, embed_audio(*mm.audio, eval_feats), w.eval);
    out.match[name] = class_match_rate(w, index, pairs);
    out.vt_after_at.push_back(vt_recall(mm, w));
    out.towers_unchanged = out.towers_unchanged && same_buffer(*mm.image, image0) && same_buffer(*mm.text, text0);
  }

  if (with_ladder) {
    // Few-shot recipe: last block and projection only.
    StageConfig few = at_cfg;
    few.trainable_blocks = 1;
    const auto all = gold_pairs(w, GoldMode::kCaption);
    for (int e = 5; e <= 12; ++e) {
      const std::size_t n = std::size_t{1} << e;
      TriModel mm = m;
      run_stage(few, at_stage_data(fewshot_subset(all, n, derive_seed(seed, "fewshot")), index), mm);
      out.ladder.push_back(
          {static_cast<double>(n), zero_shot_accuracy(w, mm, embed_audio(*mm.audio, eval_feats), w.eval)});
    }
  }
  return out;
}

// ---- criteria -------------------------------------------------------------

Outcome criterion1(const DeskRun& r) {
  Outcome o;
  o.check(r.none >= 4 * r.chance_zero_shot, "zero-shot " + fmt("%.1f%%", r.none) + " >= " +
                                               fmt("%.2f%%", 4 * r.chance_zero_shot));
  o.check(r.a2t_r1 >= 4 * r.chance_a2t_r1, "A->T R@1 " + fmt("%.2f%%", 100 * r.a2t_r1) + " >= 4x chance " +
                                              fmt("%.2f%%", 400 * r.chance_a2t_r1));
  o.check(r.pivot_seconds <= 600, "pivot training " + fmt("%.1f s", r.pivot_seconds) + " <= 600 s");
  return o;
}

Outcome criterion2(const std::vector<DeskRun>& runs) {
  std::vector<double> g, mi, ra, no;
  std::string per_seed;
  for (const auto& r : runs) {
    g.push_back(r.curated.at("gold"));
    mi.push_back(r.curated.at("mined"));
    ra.push_back(r.curated.at("random"));
    no.push_back(r.none);
    per_seed += " [seed " + std::to_string(r.seed) + ": " + fmt("%.1f", g.back()) + "/" + fmt("%.1f", mi.back()) +
                "/" + fmt("%.1f", ra.back()) + "/" + fmt("%.1f", no.back()) + "]";
  }
  const double G = median(g), M = median(mi), R = median(ra), N = median(no);
  Outcome o;
  o.check(G - M >= 2, "gold " + fmt("%.1f", G) + " >= mined " + fmt("%.1f", M) + " + 2");
  o.check(M - R >= 2, "mined " + fmt("%.1f", M) + " >= random " + fmt("%.1f", R) + " + 2");
  o.check(R - N >= 2, "random " + fmt("%.1f", R) + " >= none " + fmt("%.1f", N) + " + 2");
  o.notes.push_back("gold/mined/random/none per seed:" + per_seed);
  return o;
}

Outcome criterion3(const DeskRun& r) {
  Outcome o;
  o.check(r.vt_after_va == r.vt_before, "VT R@1/R@10 identical after VA (R@1 " +
                                            fmt("%.4f", r.vt_before.i2t_r1) + ")");
  bool at_same = true;
  for (const auto& v : r.vt_after_at) at_same = at_same && v == r.vt_before;
  o.check(at_same, "identical after each AT run");
  o.check(r.towers_unchanged, "image and text buffers bit-identical");
  return o;
}

MatD random_unit(int n, int d, Rng& rng) {
  MatD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  m.rowwise().normalize();
  return m;
}

// InfoNCE written from the definition.
double naive_info_nce(const MatD& a, const MatD& b, double scale) {
  const Eigen::Index n = a.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0, col = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      row += std::exp(scale * a.row(i).dot(b.row(j)));
      col += std::exp(scale * a.row(j).dot(b.row(i)));
    }
    const double pos = std::exp(scale * a.row(i).dot(b.row(i)));
    total += -std::log(pos / row) - std::log(pos / col);
  }
  return total / static_cast<double>(n);
}

std::vector<double> flat(const MatD& m) { return {m.data(), m.data() + m.size()}; }
MatD unflat(const std::vector<double>& v, Eigen::Index r, Eigen::Index c) { return Eigen::Map<const MatD>(v.data(), r, c); }

// Worst relative gradient error of one check.
double grad_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  const auto r = testing::compare_gradients(analytic, numeric);
  return r.entries_failing ? std::max(1.0, r.vector_error) : r.vector_error;
}

EncoderConfig small_config(Modality m) {
  EncoderConfig c;
  c.modality = m;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = 8;
  if (m == Modality::kText) {
    c.vocab_size = 11;
    c.max_tokens = 6;
  } else if (m == Modality::kImage) {
    c.patch = {4, 4, 4, 4, 3, 16};
    c.input_h = 8;
    c.input_w = 12;
  } else {
    c.patch = {4, 4, 2, 3, 1, 16};
    c.input_h = 12;
    c.input_w = 10;
  }
  return c;
}

double encoder_grad_error(Modality mod, std::uint64_t seed) {
  ModalEncoder<double> enc(small_config(mod), seed);
  Rng rng(seed + 100);
  for (auto& p : enc.params()) p += 0.05 * rng.normal();
  ImageTensor img;
  std::vector<int> toks{3, 1, 4, 1, 5};
  if (mod != Modality::kText) {
    const auto& c = enc.config();
    img = ImageTensor(c.patch.input_channels, c.input_h, c.input_w);
    for (auto& v : img.data) v = static_cast<float>(rng.normal());
  }
  const EncoderInput in = mod == Modality::kText ? EncoderInput::of(std::span<const int>(toks)) : EncoderInput::of(img);
  RowVec<double> probe(enc.config().embed_dim);
  for (auto& v : probe) v = rng.normal();
  ModalEncoder<double>::Cache cache;
  enc.forward(in, &cache);
  std::vector<double> grad(enc.params().size(), 0.0);
  enc.backward(cache, probe, grad.data());
  const auto fd = testing::central_difference(enc.params(), [&](const auto&) { return enc.forward(in).dot(probe); });
  return grad_error(grad, fd);
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  Outcome o;
  double worst_uniform = 0;
  for (int n : {2, 8, 64}) {
    MatD a = MatD::Zero(n, 16);
    a.col(0).setOnes();
    const double want = 2 * std::log(static_cast<double>(n));
    const double closed = info_nce<double>(a, a, Temperature::fixed(0.07)).value;
    const double naive = naive_info_nce(a, a, 1 / 0.07);
    worst_uniform = std::max({worst_uniform, std::abs(closed - want), std::abs(naive - want)});
  }
  o.check(worst_uniform <= 1e-6, "uniform logits give 2 ln N (worst " + fmt("%.1e", worst_uniform) + ")");

  Rng rng(404);
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(30));
    const MatD v = random_unit(n, 16, rng), a = random_unit(n, 16, rng), t = random_unit(n, 16, rng);
    Temperature temp;
    temp.log_scale = std::log(1 / rng.uniform(0.03, 1.0));
    IndexPairs diag;
    for (int i = 0; i < n; ++i) diag.push_back({i, i});
    const double tri = loss_tri<double>(v, a, t, temp).value;
    const double bibi = loss_bibi<double>(v, a, t, {diag, diag}, temp).value;
    const double at = info_nce<double>(a, t, temp).value;
    exact = exact && tri == bibi + at && tri - (bibi + at) == 0.0;
  }
  o.check(exact, "loss_tri - (loss_bibi + L(A,T)) == 0 on 20 shared batches");

  double worst = 0;
  const int n = 6, d = 32;
  const MatD a = random_unit(n, d, rng), b = random_unit(n, d, rng), c = random_unit(n, d, rng);
  Temperature temp;
  temp.log_scale = std::log(1 / 0.3);
  {
    const auto l = info_nce<double>(a, b, temp);
    std::vector<double> x = flat(a);
    worst = std::max(worst, grad_error(flat(l.grad_a), testing::central_difference(x, [&](const auto& p) {
                                         return info_nce<double>(unflat(p, n, d), b, temp).value;
                                       })));
    x = flat(b);
    worst = std::max(worst, grad_error(flat(l.grad_b), testing::central_difference(x, [&](const auto& p) {
                                         return info_nce<double>(a, unflat(p, n, d), temp).value;
                                       })));
    std::vector<double> s{temp.log_scale};
    worst = std::max(worst, grad_error({l.grad_log_scale}, testing::central_difference(s, [&](const auto& p) {
                                         Temperature t2 = temp;
                                         t2.log_scale = p[0];
                                         return info_nce<double>(a, b, t2).value;
                                       })));
  }
  {
    const auto l = loss_tri<double>(a, b, c, temp);
    for (int which = 0; which < 3; ++which) {
      const MatD& src = which == 0 ? a : which == 1 ? b : c;
      const MatD& g = which == 0 ? l.grad_image : which == 1 ? l.grad_audio : l.grad_text;
      std::vector<double> x = flat(src);
      worst = std::max(worst, grad_error(flat(g), testing::central_difference(x, [&](const auto& p) {
                                           const MatD m = unflat(p, n, d);
                                           return loss_tri<double>(which == 0 ? m : a, which == 1 ? m : b,
                                                                   which == 2 ? m : c, temp)
                                               .value;
                                         })));
    }
  }
  {
    const BiBiPairing pr{{{0, 1}, {2, 2}, {4, 0}}, {{1, 5}, {3, 3}, {5, 4}, {0, 0}}};
    const auto l = loss_bibi<double>(a, b, c, pr, temp);
    std::vector<double> x = flat(a);
    worst = std::max(worst, grad_error(flat(l.grad_image), testing::central_difference(x, [&](const auto& p) {
                                         return loss_bibi<double>(unflat(p, n, d), b, c, pr, temp).value;
                                       })));
  }
  for (Modality m : {Modality::kImage, Modality::kAudio, Modality::kText})
    worst = std::max(worst, encoder_grad_error(m, 7 + static_cast<int>(m)));
  o.check(worst <= 1e-4, "loss and encoder gradients vs central differences (worst rel " + fmt("%.1e", worst) + ")");
  const double secs = seconds_since(t0);
  o.check(secs <= 60, fmt("%.1f s", secs) + " <= 60 s");
  return o;
}

Outcome criterion5() {
  Outcome o;
  const GridShape g = patch_grid(1000, 128, {32, 32, 16, 24, 1, 64});
  o.check(g.tokens() == 305, "patch_grid(1000x128, k32, s16x24) = " + std::to_string(g.tokens()) + " tokens");

  Rng rng(505);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int out = 5, kh = 3, kw = 4, H = 9, W = 11;
    MatD w(out, 3 * kh * kw);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    const MatD ad = adapt_kernel_channels(w, 3);
    MatD x(H, W);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (int oc = 0; oc < out; ++oc)
      for (int y = 0; y + kh <= H; ++y)
        for (int xx = 0; xx + kw <= W; ++xx) {
          double orig = 0, adapted = 0;
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              for (int c = 0; c < 3; ++c) orig += w(oc, c * kh * kw + i * kw + j) * x(y + i, xx + j);
              adapted += ad(oc, i * kw + j) * x(y + i, xx + j);
            }
          worst = std::max(worst, std::abs(adapted - orig / 3) / std::max(1.0, std::abs(orig / 3)));
        }
  }
  o.check(worst <= 1e-6, "adapted kernel on replicated input = original / 3 (worst " + fmt("%.1e", worst) + ")");

  PositionGrid<double> src;
  src.rows = src.cols = 7;
  src.start = RowVec<double>(6);
  for (auto& v : src.start) v = rng.normal();
  src.grid.resize(49, 6);
  for (Eigen::Index i = 0; i < src.grid.size(); ++i) src.grid.data()[i] = rng.normal();
  const auto same = interpolate_positions(src, 7, 7);
  o.check(same.grid == src.grid && same.start == src.start, "interpolation to the same grid is the identity");
  const auto big = interpolate_positions(src, 61, 5);
  const bool corners = big.grid.row(0) == src.grid.row(0) && big.grid.row(4) == src.grid.row(6) &&
                       big.grid.row(60 * 5) == src.grid.row(42) && big.grid.row(60 * 5 + 4) == src.grid.row(48) &&
                       big.start == src.start;
  o.check(corners, "7x7 -> 61x5 keeps the four corners and the start vector");
  return o;
}

MatF quantized(MatF m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::round(m.data()[i] * 2.0f) / 2.0f;
  return m;
}

Outcome criterion6() {
  Outcome o;
  Rng rng(606);
  int recall_bad = 0, map_bad = 0, piv_bad = 0, mono_bad = 0, thr_bad = 0, piv_checks = 0;
  for (int inst = 0; inst < 100; ++inst) {
    // Retrieval: up to 100 queries and candidates, half with tied scores.
    const int nq = 1 + static_cast<int>(rng.below(100)), nc = 10 + static_cast<int>(rng.below(91));
    MatF q = testing::random_unit_rows(nq, 6, rng), c = testing::random_unit_rows(nc, 6, rng);
    if (inst % 2) q = quantized(q), c = quantized(c);
    std::vector<std::vector<int>> gold(nq);
    for (auto& g : gold)
      for (int k = 0, m = 1 + static_cast<int>(rng.below(5)); k < m; ++k) g.push_back(static_cast<int>(rng.below(nc)));
    const RetrievalResult r = recall_at_k(q, c, gold, {1, 5, 10});
    for (int k : {1, 5, 10}) recall_bad += r.recall.at(k) != testing::oracle_recall(q, c, gold, k);

    // mAP over up to 100 items.
    const int items = 5 + static_cast<int>(rng.below(96)), classes = 2 + static_cast<int>(rng.below(10));
    MatD s(items, classes);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = std::round(rng.normal() * 4) / 4;
    std::vector<std::vector<int>> labels(items);
    for (auto& l : labels)
      for (int k = 0; k < classes; ++k)
        if (rng.uniform() < 0.25) l.push_back(k);
    labels[0] = {0};
    map_bad += std::abs(mean_average_precision(s, labels).value - testing::oracle_map(s, labels)) > 1e-12;

    // Pivotability: up to 100 images and captions with duplicate identities.
    const int ni = 10 + static_cast<int>(rng.below(91)), ncap = 10 + static_cast<int>(rng.below(91));
    const MatF images = testing::random_unit_rows(ni, 6, rng), caps = testing::random_unit_rows(ncap, 6, rng);
    std::vector<Tokens> tokens(ncap);
    for (auto& t : tokens) t = {static_cast<int>(rng.below(ncap))};
    const MatF audio = testing::random_unit_rows(3, 6, rng);
    for (int a = 0; a < 3; ++a) {
      std::vector<Tokens> g;
      for (int k = 0; k < kCaptionsPerImage; ++k) g.push_back(tokens[rng.below(ncap)]);
      double prev = -1;
      for (int k = 1; k <= std::min(ni, 12); ++k) {
        const PivotabilityScore p = pivotability("x", audio.row(a), k, images, caps, tokens, g);
        const double want = testing::oracle_pivotability(audio.row(a), k, images, caps, tokens, g);
        ++piv_checks;
        piv_bad += p.value != want;
        mono_bad += p.value < prev;
        thr_bad += pivotable(p) != (want >= 0.6);
        prev = p.value;
      }
    }
  }
  o.check(recall_bad == 0, "R@k equals the oracle on 100 instances x 3 k (" + std::to_string(recall_bad) + " off)");
  o.check(map_bad == 0, "mAP equals the oracle on 100 instances (" + std::to_string(map_bad) + " off)");
  o.check(piv_bad == 0, "pivotability equals the oracle on " + std::to_string(piv_checks) + " probes");
  o.check(mono_bad == 0, "pivotability monotone in k");
  o.check(thr_bad == 0, "0.6 threshold matches the oracle");
  return o;
}

Outcome criterion7(const std::vector<DeskRun>& runs) {
  Outcome o;
  std::vector<double> slopes, r2s;
  std::string per_seed;
  for (const auto& r : runs) {
    const ScalingFit f = fit_scaling(r.ladder, 0.0);
    slopes.push_back(f.slope);
    r2s.push_back(f.r2);
    per_seed += " [seed " + std::to_string(r.seed) + ": slope " + fmt("%.2f", f.slope) + ", R2 " + fmt("%.3f", f.r2) +
                ", " + fmt("%.1f", r.ladder.front().metric) + ".." + fmt("%.1f", r.ladder.back().metric) + "]";
  }
  o.check(median(slopes) > 0, "median ladder slope " + fmt("%.3f", median(slopes)) + " > 0");
  o.check(median(r2s) >= 0.8, "median R2 " + fmt("%.3f", median(r2s)) + " >= 0.8");
  o.notes.push_back("2^5..2^12 gold pairs:" + per_seed);

  double worst = 0;
  for (double slope : {0.25, 2.5, -1.75, 10.0})
    for (double intercept : {-3.0, 0.0, 40.0}) {
      std::vector<ScalingPoint> pts;
      for (int e = 5; e <= 12; ++e) pts.push_back({std::ldexp(1.0, e), intercept + slope * e});
      worst = std::max(worst, std::abs(fit_scaling(pts, 0.0).slope - slope));
    }
  o.check(worst <= 1e-9, "noiseless slopes recovered (worst " + fmt("%.1e", worst) + ")");

  // Illustrative ladder on the line through the full gold-caption result
  // (69.2% at 44118 pairs) with 81% parity read at 2^21, plus a zero-mean
  // wiggle orthogonal to the design so the fit sees a non-trivial scatter.
  const double x_full = std::log2(44118.0), y_full = 69.2, parity = 81.0;
  const double slope = (parity - y_full) / (21.0 - x_full);
  std::vector<double> xs, wig;
  for (int e = 7; e <= 15; ++e) xs.push_back(e), wig.push_back(e % 2 ? 0.6 : -0.6);
  xs.push_back(x_full), wig.push_back(0.3);
  {
    // Project the wiggle off span{1, x}.
    const double n = static_cast<double>(xs.size());
    double mx = 0, mw = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, mw += wig[i] / n;
    double sxx = 0, sxw = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) sxx += (xs[i] - mx) * (xs[i] - mx), sxw += (xs[i] - mx) * (wig[i] - mw);
    for (std::size_t i = 0; i < xs.size(); ++i) wig[i] -= mw + sxw / sxx * (xs[i] - mx);
  }
  std::vector<ScalingPoint> fig;
  for (std::size_t i = 0; i < xs.size(); ++i) fig.push_back({std::exp2(xs[i]), y_full + slope * (xs[i] - x_full) + wig[i]});
  std::sort(fig.begin(), fig.end(), [](const auto& a, const auto& b) { return a.count < b.count; });
  const ScalingFit f = fit_scaling(fig, parity);
  o.check(std::abs(f.extrapolated_log2 - 21.0) < 0.5 && f.extrapolated_count > 1.4e6 && f.extrapolated_count < 2.9e6,
          "extrapolation to 81%: 2^" + fmt("%.2f", f.extrapolated_log2) + " = " + fmt("%.2e", f.extrapolated_count) +
              " pairs (about 2^21, 2M)");
  return o;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

std::string tree_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string s;
  for (const auto& f : files) s += fs::relative(f, dir).generic_string() + '\n' + binio::read_file(f);
  return s;
}

Outcome criterion8() {
  Outcome o;
  const fs::path d = fs::temp_directory_path() / "pivotkit-acceptance-cli";
  fs::remove_all(d);
  fs::create_directories(d);
  auto p = [&](const char* n) { return (d / n).string(); };
  const std::string w = p("world");
  using Cmd = std::vector<std::string>;
  const std::vector<std::pair<std::string, Cmd>> stages = {
      {"world", {"gen-world"}},
      {"vt", {"pretrain-vt", "--world", w}},
      {"va", {"pretrain-va", "--world", w, "--vt", p("vt")}},
      {"zs-none", {"eval-zeroshot", "--world", w, "--model", p("va"), "--label", "none"}},
      {"mined", {"curate", "--world", w, "--strategy", "mined", "--model", p("va")}},
      {"at", {"finetune-at", "--world", w, "--va", p("va"), "--pairs", p("mined")}},
      {"zs-mined", {"eval-zeroshot", "--world", w, "--model", p("at"), "--label", "mined"}},
      {"retrieval", {"eval-retrieval", "--world", w, "--model", p("at")}},
      {"pivot", {"probe-pivotability", "--world", w, "--model", p("va"), "--k", "1,4,16"}},
      {"bundle", {"report", "--inputs", p("zs-none"), p("zs-mined"), p("retrieval"), p("pivot")}},
  };
  const auto t0 = Clock::now();
  bool ok = true;
  for (const auto& [out, cmd] : stages) {
    Cmd full = cmd;
    full.insert(full.end(), {"--seed", "0", "--out", p(out.c_str())});
    const CliRun r = run_cli(full);
    if (r.code != 0) {
      o.check(false, out + " exited " + std::to_string(r.code) + ": " + r.err);
      ok = false;
      break;
    }
  }
  const double secs = seconds_since(t0);
  if (!ok) return o;
  o.check(secs <= 900, "default pipeline " + fmt("%.1f s", secs) + " <= 900 s");

  const EvalReport zs = EvalReport::read(d / "zs-none" / "report.json");
  double acc = -1, chance = 0;
  for (const auto& row : zs.rows) {
    if (row.metric == "accuracy") acc = row.value;
    if (row.metric == "chance") chance = row.value;
  }
  o.check(acc > chance, "pivot zero-shot accuracy " + fmt("%.1f%%", acc) + " above chance " + fmt("%.2f%%", chance));

  int identical = 0;
  for (const auto& [out, cmd] : stages) {
    const std::string again = out + "-rerun";
    Cmd full = cmd;
    full.insert(full.end(), {"--seed", "0", "--jobs", "1", "--out", p(again.c_str())});
    const CliRun r = run_cli(full);
    identical += r.code == 0 && tree_bytes(d / out) == tree_bytes(d / again);
  }
  o.check(identical == static_cast<int>(stages.size()),
          std::to_string(identical) + "/" + std::to_string(stages.size()) + " stages byte-identical on rerun");
  fs::remove_all(d);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pivotkit acceptance runner"};
  std::vector<int> criteria = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> expect_fail;
  int seeds = 3;
  std::string json_path;
  app.add_option("--criteria", criteria, "criteria to run")->delimiter(',');
  app.add_option("--expect-fail", expect_fail, "criteria whose FAIL does not fail the exit status")->delimiter(',');
  app.add_option("--seeds", seeds, "seeds for the median criteria")->check(CLI::PositiveNumber);
  app.add_option("--json", json_path, "also write the results as JSON");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> want(criteria.begin(), criteria.end());
  auto wants = [&](int c) { return want.count(c) > 0; };
  std::vector<DeskRun> runs;
  if (wants(1) || wants(2) || wants(3) || wants(7)) {
    const int n = (wants(2) || wants(7)) ? seeds : 1;
    for (int s = 0; s < n; ++s) {
      const auto t = Clock::now();
      runs.push_back(desk_run(static_cast<std::uint64_t>(s), wants(7)));
      std::cerr << "desk run seed " << s << ": " << fmt("%.1f s", seconds_since(t)) << '\n';
    }
  }

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> table = {
      {1, {"pivot emergence", [&] { return criterion1(runs.front()); }}},
      {2, {"curation ordering", [&] { return criterion2(runs); }}},
      {3, {"frozen-pivot invariance", [&] { return criterion3(runs.front()); }}},
      {4, {"objective correctness", [] { return criterion4(); }}},
      {5, {"adaptation correctness", [] { return criterion5(); }}},
      {6, {"metric oracles", [] { return criterion6(); }}},
      {7, {"scaling-law machinery", [&] { return criterion7(runs); }}},
      {8, {"determinism", [] { return criterion8(); }}},
  };
  nlohmann::json results = nlohmann::json::array();
  bool failed = false;
  for (const auto& [id, entry] : table) {
    if (!wants(id)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o.check(false, std::string("threw: ") + e.what());
    }
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << entry.first << "): " << detail
              << std::endl;
    results.push_back({{"criterion", id}, {"name", entry.first}, {"pass", o.pass}, {"notes", o.notes}});
    if (!o.pass && std::find(expect_fail.begin(), expect_fail.end(), id) == expect_fail.end()) failed = true;
  }
  if (!json_path.empty()) binio::write_file(json_path, results.dump(1) + "\n");
  return failed ? 1 : 0;
}
