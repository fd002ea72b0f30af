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

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pivotkit/eval.hpp"
#include "tiny_world.hpp"

using namespace pivotkit;
using namespace pivotkit::testing;

namespace {

// Coarsely quantized scores so that ties occur.
MatF quantized_unit_rows(int n, int d, Rng& rng) {
  MatF m = random_unit_rows(n, d, rng);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::round(m.data()[i] * 2.0f) / 2.0f;
  return m;
}

}  // namespace

TEST_CASE("recall matches the brute-force oracle") {
  Rng rng(1);
  for (int inst = 0; inst < 50; ++inst) {
    const int nq = 1 + static_cast<int>(rng.below(50)), nc = 10 + static_cast<int>(rng.below(50));
    const MatF q = inst % 2 ? quantized_unit_rows(nq, 6, rng) : random_unit_rows(nq, 6, rng);
    const MatF c = inst % 2 ? quantized_unit_rows(nc, 6, rng) : random_unit_rows(nc, 6, rng);
    std::vector<std::vector<int>> gold(nq);
    for (auto& g : gold)
      for (int k = 0, m = 1 + static_cast<int>(rng.below(5)); k < m; ++k) g.push_back(static_cast<int>(rng.below(nc)));
    const RetrievalResult r = recall_at_k(q, c, gold, {1, 5, 10});
    for (int k : {1, 5, 10}) CHECK(r.recall.at(k) == oracle_recall(q, c, gold, k));
    for (const auto& ranked : r.ranked) {
      std::vector<int> sorted = ranked;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < nc; ++i) CHECK(sorted[i] == i);
    }
    CHECK(r.recall_at(1) <= r.recall_at(5));
    CHECK(r.recall_at(5) <= r.recall_at(10));
  }
}

TEST_CASE("recall edge cases") {
  Rng rng(2);
  const MatF c = random_unit_rows(6, 4, rng);
  std::vector<std::vector<int>> gold = {{0}, {1}, {2}, {3}, {4}, {5}};
  CHECK(recall_at_k(c, c, gold, {1}).recall.at(1) == 1.0);
  CHECK_THROWS_AS(recall_at_k(c, c, gold, {7}), Error);
  CHECK_THROWS_AS(recall_at_k(c, c, {{0}}, {1}), Error);

  // Random embeddings: E[R@k] = k / N for a single gold.
  const int n = 40, k = 4, trials = 60;
  double sum = 0;
  int queries = 0;
  for (int t = 0; t < trials; ++t) {
    const MatF q = random_unit_rows(n, 8, rng), cand = random_unit_rows(n, 8, rng);
    std::vector<std::vector<int>> g(n);
    for (int i = 0; i < n; ++i) g[i] = {i};
    sum += recall_at_k(q, cand, g, {k}).recall.at(k) * n;
    queries += n;
  }
  const double p = double(k) / n;
  CHECK(std::abs(sum / queries - p) <= 3 * std::sqrt(p * (1 - p) / queries));
}

TEST_CASE("zero-shot classification") {
  MatF labels(3, 2);
  labels << 1, 0, 0, 1, -1, 0;
  RowVec<float> a(2);
  a << 0, 1;
  CHECK(zero_shot_classify(a, labels) == 1);
  CHECK(zero_shot_classify(a, MatF(labels.topRows(1))) == 0);
  a << 0.7071f, 0.7071f;  // tie between 0 and 1
  CHECK(zero_shot_classify(a, labels) == 0);
  CHECK(zero_shot_classify(a * 3.0f, labels * 0.5f) == zero_shot_classify(a, labels));
  CHECK_THROWS_AS(zero_shot_classify(a, MatF(0, 2)), Error);

  const World& w = tiny_world();
  const Encoder text(text_encoder_config(w, tiny_shape()), 3);
  std::vector<Tokens> names;
  for (int c = 0; c < 4; ++c) names.push_back(w.label_tokens(c));
  const MatF plain = embed_labels(text, names);
  CHECK(embed_labels(text, names, {}) == plain);
  for (int c = 0; c < 4; ++c) CHECK(zero_shot_classify(plain.row(c), names, text) == c);
  const Tokens prompt = w.vocab.encode("the sound of");
  const MatF prompted = embed_labels(text, names, prompt);
  CHECK(prompted.row(0) == text.encode(std::span<const int>(w.label_tokens(0, "the sound of"))));
}

TEST_CASE("mAP matches the brute-force oracle") {
  Rng rng(3);
  for (int inst = 0; inst < 50; ++inst) {
    MatD s(30, 8);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = std::round(rng.normal() * 4) / 4;
    std::vector<std::vector<int>> gold(30);
    for (auto& g : gold) {
      for (int c = 0; c < 8; ++c)
        if (rng.uniform() < 0.2) g.push_back(c);
    }
    bool any = false;
    for (const auto& g : gold) any = any || !g.empty();
    if (!any) continue;
    const MapResult m = mean_average_precision(s, gold);
    CHECK(m.value == doctest::Approx(oracle_map(s, gold)).epsilon(1e-12));
  }
}

TEST_CASE("mAP closed forms") {
  MatD perfect(4, 2);
  perfect << 0.9, 0.1, 0.8, 0.2, 0.1, 0.7, 0.2, 0.6;
  CHECK(mean_average_precision(perfect, {{0}, {0}, {1}, {1}}).value == 1.0);
  for (int r = 1; r <= 6; ++r) {
    std::vector<double> s = {6, 5, 4, 3, 2, 1};
    std::vector<char> rel(6, 0);
    rel[r - 1] = 1;
    CHECK(average_precision(s, rel) == doctest::Approx(1.0 / r));
  }
  const MapResult m = mean_average_precision(perfect, {{0}, {0}, {0}, {0}});
  CHECK(m.excluded == std::vector<int>{1});
  CHECK(std::isnan(m.per_class[1]));
}

TEST_CASE("image-audio retrieval precision uses label-set equality") {
  Rng rng(4);
  const MatF e = random_unit_rows(20, 8, rng);
  std::vector<std::vector<int>> labels(20);
  for (int i = 0; i < 20; ++i) labels[i] = {i % 3, 3 + i % 2};
  CHECK(va_retrieval_check(e, e, labels, labels) == 1.0);

  // Overlapping but unequal label sets do not count.
  std::vector<std::vector<int>> other = labels;
  for (auto& l : other) l.push_back(9);
  CHECK(va_retrieval_check(e, e, labels, other) == 0.0);

  // Random ranking: precision is the collision probability of label sets.
  const int n = 200, trials = 20;
  const std::vector<std::vector<int>> sets = {{0}, {1}, {0, 1}, {2}};
  const std::vector<double> freq = {0.4, 0.3, 0.2, 0.1};
  double collision = 0;
  for (double f : freq) collision += f * f;
  double total = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<int>> ql(n), cl(n);
    auto draw = [&] {
      double u = rng.uniform();
      for (int s = 0; s < 4; ++s) {
        if (u < freq[s]) return sets[s];
        u -= freq[s];
      }
      return sets[3];
    };
    for (int i = 0; i < n; ++i) ql[i] = draw(), cl[i] = draw();
    total += va_retrieval_check(random_unit_rows(n, 8, rng), random_unit_rows(n, 8, rng), ql, cl);
  }
  const double m = total / trials, sd = std::sqrt(collision * (1 - collision) / (n * trials));
  CHECK(std::abs(m - collision) <= 4 * sd);
}

TEST_CASE("pivotability") {
  Rng rng(5);
  SUBCASE("gold-only pool gives 1") {
    const MatF images = random_unit_rows(10, 6, rng), caps = random_unit_rows(5, 6, rng);
    std::vector<Tokens> tokens = {{1}, {2}, {3}, {4}, {5}};
    for (int k = 1; k <= 10; ++k)
      CHECK(pivotability("a", images.row(0), k, images, caps, tokens, tokens).value == 1.0);
  }
  SUBCASE("matches the two-step oracle and grows with k") {
    for (int inst = 0; inst < 20; ++inst) {
      const MatF audio = random_unit_rows(20, 6, rng), images = random_unit_rows(30, 6, rng),
                 caps = random_unit_rows(50, 6, rng);
      std::vector<Tokens> tokens(50);
      for (int c = 0; c < 50; ++c) tokens[c] = {static_cast<int>(rng.below(40))};  // some duplicates
      for (int a = 0; a < 20; ++a) {
        std::vector<Tokens> gold;
        for (int g = 0; g < 5; ++g) gold.push_back(tokens[rng.below(50)]);
        double prev = 0;
        for (int k = 1; k <= 8; ++k) {
          const auto s = pivotability("x", audio.row(a), k, images, caps, tokens, gold);
          CHECK(s.value == oracle_pivotability(audio.row(a), k, images, caps, tokens, gold));
          CHECK(s.value >= prev);
          CHECK(s.value <= 1.0);
          prev = s.value;
        }
      }
    }
  }
  SUBCASE("threshold and errors") {
    PivotabilityScore s;
    s.value = 0.6;
    CHECK(pivotable(s));
    s.value = 0.4;
    CHECK_FALSE(pivotable(s));
    const MatF m = random_unit_rows(3, 4, rng);
    CHECK_THROWS_AS(pivotability("a", m.row(0), 0, m, m, {{1}, {2}, {3}}, {{1}}), Error);
  }
}

TEST_CASE("scaling fit") {
  SUBCASE("noise-free lines are recovered exactly") {
    for (double slope : {0.5, 3.25, -1.0}) {
      std::vector<ScalingPoint> pts;
      for (int e = 5; e <= 12; ++e) pts.push_back({std::exp2(e), 10.0 + slope * e});
      const ScalingFit f = fit_scaling(pts, 10.0 + slope * 20);
      CHECK(std::abs(f.slope - slope) < 1e-9);
      CHECK(std::abs(f.intercept - 10.0) < 1e-9);
      CHECK(std::abs(f.extrapolated_log2 - 20.0) < 1e-9);
      CHECK(f.extrapolated);
      CHECK(f.r2 == doctest::Approx(1.0));
    }
  }
  SUBCASE("noisy lines: slope within 5%") {
    Rng rng(6);
    int good = 0;
    for (int t = 0; t < 100; ++t) {
      std::vector<ScalingPoint> pts;
      for (int e = 5; e <= 12; ++e) pts.push_back({std::exp2(e), 20.0 + 4.0 * e + 0.3 * rng.normal()});
      good += std::abs(fit_scaling(pts, 50).slope - 4.0) <= 0.05 * 4.0;
    }
    CHECK(good == 100);
  }
  SUBCASE("contracts") {
    CHECK_THROWS_AS(fit_scaling({{1, 1}, {2, 2}}, 3), Error);
    CHECK_THROWS_AS(fit_scaling({{4, 1}, {2, 2}, {8, 3}}, 3), Error);
    const ScalingFit inside = fit_scaling({{2, 1}, {4, 2}, {8, 3}}, 2);
    CHECK_FALSE(inside.extrapolated);
    CHECK(inside.extrapolated_count == doctest::Approx(4.0));
  }
}

TEST_CASE("eval report round trip") {
  EvalReport r;
  r.name = "zeroshot";
  r.add("zeroshot", "pivot", "accuracy", 0.8125);
  r.add("retrieval", "pivot", "a2t_r@1", 0.25);
  const EvalReport back = EvalReport::from_json(r.to_json());
  CHECK(back.name == "zeroshot");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].value == 0.8125);
  CHECK(r.to_csv() == "table,config,metric,value\nzeroshot,pivot,accuracy,0.8125\nretrieval,pivot,a2t_r@1,0.25\n");
  CHECK_THROWS_AS(EvalReport::from_json("{"), Error);
}
