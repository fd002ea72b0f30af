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

// Measurement over embeddings: retrieval recall, prompted zero-shot
// classification, macro mAP, image-audio retrieval precision, the
// pivotability probe and log-linear scaling fits.
//
// All rankings sort by descending cosine and break ties by candidate index.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pivotkit/common.hpp"
#include "pivotkit/encoder.hpp"
#include "pivotkit/world.hpp"

namespace pivotkit {

/// Candidate indices of one query, best first.
std::vector<int> rank_candidates(const RowVec<float>& query, const MatF& candidates);

struct RetrievalResult {
  std::vector<std::vector<int>> ranked;  // per query, a permutation of the candidates
  std::vector<std::vector<int>> gold;    // per query
  std::map<int, double> recall;          // k -> mean hit rate

  bool hit(std::size_t query, int k) const;
  double recall_at(int k) const;  // computed from `ranked`, any k
};

/// Hit iff a gold candidate is among the top k. `ks` default to {1, 10}
/// (clamped to the candidate count only when the caller asks for it).
RetrievalResult recall_at_k(const MatF& queries, const MatF& candidates, const std::vector<std::vector<int>>& gold,
                            const std::vector<int>& ks = {1, 10});

/// Argmax of cosine against each label embedding, lowest index on ties.
int zero_shot_classify(const RowVec<float>& audio, const MatF& label_embeddings);

/// Label embeddings from label token sequences with an optional prompt.
MatF embed_labels(const Encoder& text, const std::vector<Tokens>& labels, const Tokens& prompt = {});
int zero_shot_classify(const RowVec<float>& audio, const std::vector<Tokens>& labels, const Encoder& text,
                       const Tokens& prompt = {});

struct MapResult {
  double value = 0.0;
  std::vector<double> per_class;  // NaN for excluded classes
  std::vector<int> excluded;      // classes without positives
};

/// Average precision of one ranking: sorted by `scores` descending
/// (ties by item index), positives flagged in `relevant`.
double average_precision(const std::vector<double>& scores, const std::vector<char>& relevant);

/// Macro mAP over classes. `scores` is items x classes.
MapResult mean_average_precision(const MatD& scores, const std::vector<std::vector<int>>& gold);

/// Top-k image -> audio precision; a candidate is relevant iff its label
/// set equals the query's.
double va_retrieval_check(const MatF& image_queries, const MatF& audio_candidates,
                          const std::vector<std::vector<int>>& query_labels,
                          const std::vector<std::vector<int>>& candidate_labels, int k = 1);

struct PivotabilityScore {
  double value = 0.0;
  int k = 0;
  std::string audio_id;
  int retrieved_gold = 0;
};

inline constexpr double kPivotableThreshold = 0.6;
inline constexpr int kCaptionsPerImage = 5;

/// k nearest images of the audio, then each image's top-5 captions; the
/// union (identical captions collapse) intersected with the golds, over the
/// number of golds.
PivotabilityScore pivotability(const std::string& audio_id, const RowVec<float>& audio, int k, const MatF& image_index,
                               const MatF& caption_index, const std::vector<Tokens>& captions,
                               const std::vector<Tokens>& gold);
inline bool pivotable(const PivotabilityScore& s) { return s.value >= kPivotableThreshold; }

struct ScalingPoint {
  double count = 0.0;
  double metric = 0.0;
};

struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<double> residuals;
  double target_metric = 0.0;
  double extrapolated_count = 0.0;  // 2^((target - intercept) / slope)
  double extrapolated_log2 = 0.0;
  bool extrapolated = false;  // target count outside the ladder
};

ScalingFit fit_scaling(const std::vector<ScalingPoint>& ladder, double target_metric);

/// One table row: metric name, configuration label and value.
struct MetricRow {
  std::string table;
  std::string config;
  std::string metric;
  double value = 0.0;
};

struct EvalReport {
  std::string name;
  std::vector<MetricRow> rows;

  void add(const std::string& table, const std::string& config, const std::string& metric, double value) {
    rows.push_back({table, config, metric, value});
  }
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string to_csv() const;
  void write(const std::filesystem::path& json_path) const;  // plus .csv next to it
  static EvalReport read(const std::filesystem::path& json_path);
};

}  // namespace pivotkit
