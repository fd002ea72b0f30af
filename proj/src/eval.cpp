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

#include "pivotkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pivotkit/binio.hpp"
#include "pivotkit/parallel.hpp"

namespace pivotkit {

namespace {

using json = nlohmann::json;

std::vector<int> order_by_score(const VecF& s) {
  std::vector<int> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s[a] > s[b]; });
  return idx;
}

std::vector<int> top_k(const VecF& s, int k) {
  std::vector<int> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int a, int b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<int> rank_candidates(const RowVec<float>& query, const MatF& candidates) {
  if (query.size() != candidates.cols()) throw Error("rank_candidates: dimension mismatch");
  return order_by_score(candidates * query.transpose());
}

bool RetrievalResult::hit(std::size_t q, int k) const {
  const auto& r = ranked.at(q);
  const int lim = std::min<int>(k, static_cast<int>(r.size()));
  for (int i = 0; i < lim; ++i)
    if (std::find(gold[q].begin(), gold[q].end(), r[i]) != gold[q].end()) return true;
  return false;
}

double RetrievalResult::recall_at(int k) const {
  if (ranked.empty()) return 0.0;
  int hits = 0;
  for (std::size_t q = 0; q < ranked.size(); ++q) hits += hit(q, k);
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

RetrievalResult recall_at_k(const MatF& queries, const MatF& candidates, const std::vector<std::vector<int>>& gold,
                            const std::vector<int>& ks) {
  if (static_cast<std::size_t>(queries.rows()) != gold.size())
    throw Error("recall_at_k: one gold set per query is required");
  if (queries.cols() != candidates.cols()) throw Error("recall_at_k: dimension mismatch");
  for (int k : ks)
    if (k < 1 || k > candidates.rows())
      throw Error("recall_at_k: k = " + std::to_string(k) + " exceeds the " + std::to_string(candidates.rows()) +
                  " candidates");
  RetrievalResult r;
  r.gold = gold;
  r.ranked.resize(queries.rows());
  const MatF sims = queries * candidates.transpose();
  parallel_for(static_cast<int>(queries.rows()), [&](int q) { r.ranked[q] = order_by_score(sims.row(q).transpose()); });
  for (int k : ks) r.recall[k] = r.recall_at(k);
  return r;
}

int zero_shot_classify(const RowVec<float>& audio, const MatF& labels) {
  if (labels.rows() == 0) throw Error("zero_shot_classify: no labels");
  if (labels.cols() != audio.size()) throw Error("zero_shot_classify: dimension mismatch");
  const VecF s = labels * audio.transpose();
  int best = 0;
  for (int i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  return best;
}

MatF embed_labels(const Encoder& text, const std::vector<Tokens>& labels, const Tokens& prompt) {
  if (labels.empty()) throw Error("zero_shot_classify: no labels");
  MatF out(labels.size(), text.config().embed_dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tokens t = prompt;
    t.insert(t.end(), labels[i].begin(), labels[i].end());
    out.row(i) = text.encode(std::span<const int>(t));
  }
  return out;
}

int zero_shot_classify(const RowVec<float>& audio, const std::vector<Tokens>& labels, const Encoder& text,
                       const Tokens& prompt) {
  return zero_shot_classify(audio, embed_labels(text, labels, prompt));
}

double average_precision(const std::vector<double>& scores, const std::vector<char>& relevant) {
  if (scores.size() != relevant.size()) throw Error("average_precision: size mismatch");
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  int hits = 0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    if (relevant[idx[r]]) sum += static_cast<double>(++hits) / static_cast<double>(r + 1);
  if (hits == 0) throw Error("average_precision: no positives");
  return sum / hits;
}

MapResult mean_average_precision(const MatD& scores, const std::vector<std::vector<int>>& gold) {
  if (static_cast<std::size_t>(scores.rows()) != gold.size()) throw Error("mean_average_precision: one label set per item");
  MapResult m;
  const int classes = static_cast<int>(scores.cols());
  m.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> s(scores.rows());
    std::vector<char> rel(scores.rows(), 0);
    bool any = false;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      s[i] = scores(i, c);
      for (int g : gold[i]) {
        if (g < 0 || g >= classes) throw Error("mean_average_precision: label out of range");
        if (g == c) rel[i] = 1, any = true;
      }
    }
    if (!any) {
      m.excluded.push_back(c);
      continue;
    }
    m.per_class[c] = average_precision(s, rel);
    sum += m.per_class[c];
    ++used;
  }
  if (used == 0) throw Error("mean_average_precision: no class has a positive item");
  m.value = sum / used;
  return m;
}

double va_retrieval_check(const MatF& images, const MatF& audio, const std::vector<std::vector<int>>& qlabels,
                          const std::vector<std::vector<int>>& clabels, int k) {
  if (static_cast<std::size_t>(images.rows()) != qlabels.size() ||
      static_cast<std::size_t>(audio.rows()) != clabels.size())
    throw Error("va_retrieval_check: one label set per row is required");
  if (k < 1 || k > audio.rows()) throw Error("va_retrieval_check: k out of range");
  const MatF sims = images * audio.transpose();
  int relevant = 0;
  for (Eigen::Index q = 0; q < images.rows(); ++q)
    for (int c : top_k(sims.row(q).transpose(), k)) relevant += clabels[c] == qlabels[q];
  return static_cast<double>(relevant) / static_cast<double>(images.rows() * k);
}

PivotabilityScore pivotability(const std::string& audio_id, const RowVec<float>& audio, int k, const MatF& image_index,
                               const MatF& caption_index, const std::vector<Tokens>& captions,
                               const std::vector<Tokens>& gold) {
  if (k < 1) throw Error("pivotability: k must be at least 1");
  if (k > image_index.rows()) throw Error("pivotability: k exceeds the image index");
  if (static_cast<std::size_t>(caption_index.rows()) != captions.size())
    throw Error("pivotability: caption index and captions differ in count");
  if (gold.empty()) throw Error("pivotability: no gold captions");
  const int per_image = std::min<int>(kCaptionsPerImage, static_cast<int>(caption_index.rows()));
  std::set<Tokens> retrieved;
  for (int img : top_k(image_index * audio.transpose(), k))
    for (int c : top_k(caption_index * image_index.row(img).transpose(), per_image)) retrieved.insert(captions[c]);
  const std::set<Tokens> golds(gold.begin(), gold.end());
  PivotabilityScore s;
  s.audio_id = audio_id;
  s.k = k;
  for (const auto& g : golds) s.retrieved_gold += retrieved.count(g) > 0;
  s.value = static_cast<double>(s.retrieved_gold) / static_cast<double>(gold.size());
  return s;
}

ScalingFit fit_scaling(const std::vector<ScalingPoint>& ladder, double target) {
  if (ladder.size() < 3) throw Error("fit_scaling: at least 3 ladder points are required");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!(ladder[i].count > 0)) throw Error("fit_scaling: pair counts must be positive");
    if (i && !(ladder[i].count > ladder[i - 1].count)) throw Error("fit_scaling: counts must be strictly increasing");
  }
  const double n = static_cast<double>(ladder.size());
  double mx = 0, my = 0;
  for (const auto& p : ladder) mx += std::log2(p.count), my += p.metric;
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : ladder) {
    const double dx = std::log2(p.count) - mx, dy = p.metric - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0)) throw Error("fit_scaling: zero variance in log2(count)");
  ScalingFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (const auto& p : ladder) {
    const double r = p.metric - (f.intercept + f.slope * std::log2(p.count));
    f.residuals.push_back(r);
    sse += r * r;
  }
  f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  f.target_metric = target;
  if (f.slope != 0.0) {
    f.extrapolated_log2 = (target - f.intercept) / f.slope;
    f.extrapolated_count = std::exp2(f.extrapolated_log2);
  } else {
    f.extrapolated_log2 = std::numeric_limits<double>::infinity();
    f.extrapolated_count = std::numeric_limits<double>::infinity();
  }
  f.extrapolated = !(f.extrapolated_count >= ladder.front().count && f.extrapolated_count <= ladder.back().count);
  return f;
}

std::string EvalReport::to_json() const {
  json j;
  j["name"] = name;
  json rs = json::array();
  for (const auto& r : rows) rs.push_back({{"table", r.table}, {"config", r.config}, {"metric", r.metric}, {"value", r.value}});
  j["rows"] = rs;
  return j.dump(1) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.name = j.at("name");
    for (const auto& x : j.at("rows")) r.rows.push_back({x.at("table"), x.at("config"), x.at("metric"), x.at("value")});
  } catch (const json::exception& e) {
    throw Error(std::string("malformed eval report: ") + e.what());
  }
  return r;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "table,config,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.10g", r.value);
    out << r.table << ',' << r.config << ',' << r.metric << ',' << buf << '\n';
  }
  return out.str();
}

void EvalReport::write(const std::filesystem::path& path) const {
  binio::write_file(path, to_json());
  std::filesystem::path csv = path;
  csv.replace_extension(".csv");
  binio::write_file(csv, to_csv());
}

EvalReport EvalReport::read(const std::filesystem::path& path) { return from_json(binio::read_file(path)); }

}  // namespace pivotkit
