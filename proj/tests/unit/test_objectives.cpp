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
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pivotkit/objectives.hpp"
#include "pivotkit/parallel.hpp"
#include "pivotkit/rng.hpp"

using namespace pivotkit;

namespace {

MatD random_unit(int n, int d, Rng& rng) {
  MatD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  m.rowwise().normalize();
  return m;
}

// Plain two-loop InfoNCE written from the definition, used as the value oracle.
double naive_info_nce(const MatD& a, const MatD& b, double scale) {
  const int n = static_cast<int>(a.rows());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    double row = 0, col = 0;
    for (int j = 0; j < n; ++j) {
      row += std::exp(scale * a.row(i).dot(b.row(j)));
      col += std::exp(scale * a.row(j).dot(b.row(i)));
    }
    const double pos = std::exp(scale * a.row(i).dot(b.row(i)));
    total += -std::log(pos / row) - std::log(pos / col);
  }
  return total / n;
}

std::vector<double> flat(const MatD& m) { return {m.data(), m.data() + m.size()}; }

MatD unflat(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const MatD>(v.data(), rows, cols);
}

template <typename A>
void check_close(const A& analytic, const std::vector<double>& numeric) {
  const auto r = testing::compare_gradients(analytic, numeric);
  INFO("vector rel err " << r.vector_error << ", max entry rel err " << r.max_entry_error);
  CHECK(r.vector_error < 1e-4);
  CHECK(r.entries_failing == 0);
}

EncoderConfig tiny_image() {
  EncoderConfig c;
  c.modality = Modality::kImage;
  c.patch = {4, 4, 4, 4, 3, 16};
  c.input_h = 8;
  c.input_w = 8;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = 8;
  return c;
}

EncoderConfig tiny_audio() {
  EncoderConfig c = tiny_image();
  c.modality = Modality::kAudio;
  c.patch = {4, 4, 2, 2, 1, 16};
  c.input_h = 8;
  c.input_w = 6;
  return c;
}

EncoderConfig tiny_text() {
  EncoderConfig c;
  c.modality = Modality::kText;
  c.vocab_size = 9;
  c.max_tokens = 4;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = 8;
  return c;
}

std::vector<ImageTensor> random_images(int n, int c, int h, int w, Rng& rng) {
  std::vector<ImageTensor> out;
  for (int i = 0; i < n; ++i) {
    ImageTensor t(c, h, w);
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<EncoderInput> inputs_of(const std::vector<ImageTensor>& xs) {
  std::vector<EncoderInput> in;
  for (const auto& x : xs) in.push_back(EncoderInput::of(x));
  return in;
}

}  // namespace

TEST_CASE("similarity matrix") {
  MatD e = MatD::Identity(2, 2);
  const auto s = similarity_matrix<double>(e, e, 0.5);
  CHECK(s.values(0, 0) == 2.0);
  CHECK(s.values(1, 1) == 2.0);
  CHECK(s.values(0, 1) == 0.0);
  CHECK(s.values(1, 0) == 0.0);
  CHECK(s.temperature == 0.5);

  Rng rng(1);
  const MatD a = random_unit(5, 4, rng);
  CHECK((similarity_matrix<double>(a, a, 1.0).values.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS(similarity_matrix<double>(a, a, 0.0));
  CHECK_THROWS(similarity_matrix<double>(a, a, -1.0));
  CHECK_THROWS(similarity_matrix<double>(a * 2.0, a, 1.0));
}

TEST_CASE("InfoNCE values") {
  SUBCASE("uniform logits give 2 ln N") {
    for (int n : {2, 8, 64}) {
      MatD a = MatD::Zero(n, 4);
      a.col(0).setOnes();
      const auto l = info_nce<double>(a, a, Temperature{});
      CHECK(std::abs(l.value - 2 * std::log(n)) < 1e-6);
    }
  }
  SUBCASE("two-item closed form") {
    const MatD e = MatD::Identity(2, 2);
    const auto l = info_nce<double>(e, e, Temperature::fixed(0.1));
    const double want = 2 * std::log1p(std::exp(-10.0));
    CHECK(l.value == doctest::Approx(want).epsilon(1e-9));
    CHECK(l.value == doctest::Approx(9.08e-5).epsilon(1e-3));
  }
  SUBCASE("agrees with the definition") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 2 + static_cast<int>(rng.below(12));
      const MatD a = random_unit(n, 6, rng), b = random_unit(n, 6, rng);
      const Temperature t = Temperature::fixed(rng.uniform(0.05, 1.0));
      CHECK(info_nce<double>(a, b, t).value == doctest::Approx(naive_info_nce(a, b, t.scale())).epsilon(1e-10));
      CHECK(info_nce<double>(a, b, t).value >= 0.0);
    }
  }
  SUBCASE("batch of one is undefined") {
    const MatD a = MatD::Identity(1, 3);
    CHECK_THROWS_WITH(info_nce<double>(a, a, Temperature{}), "contrastive loss undefined for batch of 1");
  }
}

TEST_CASE("InfoNCE is invariant to consistent re-indexing") {
  Rng rng(3);
  const MatD a = random_unit(10, 8, rng), b = random_unit(10, 8, rng);
  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  MatD pa(10, 8), pb(10, 8);
  for (int i = 0; i < 10; ++i) {
    pa.row(i) = a.row(perm[i]);
    pb.row(i) = b.row(perm[i]);
  }
  CHECK(info_nce<double>(a, b, Temperature{}).value ==
        doctest::Approx(info_nce<double>(pa, pb, Temperature{}).value).epsilon(1e-12));
}

TEST_CASE("shuffling positives raises the loss of a separated batch") {
  Rng rng(4);
  const MatD a = random_unit(8, 16, rng);
  MatD b = a + 0.05 * random_unit(8, 16, rng);
  b.rowwise().normalize();
  MatD shuffled = b;
  for (int i = 0; i < 8; ++i) shuffled.row(i) = b.row((i + 3) % 8);
  CHECK(info_nce<double>(a, shuffled, Temperature{}).value > info_nce<double>(a, b, Temperature{}).value);
}

TEST_CASE("temperature") {
  Temperature t;
  CHECK(t.tau() == doctest::Approx(0.07).epsilon(1e-12));
  t.log_scale = 10.0;
  CHECK(t.tau() == doctest::Approx(0.01));
  CHECK(t.clamped());
  CHECK_THROWS(Temperature::fixed(0.0));

  // No scale gradient while clamped.
  Rng rng(5);
  const MatD a = random_unit(4, 3, rng), b = random_unit(4, 3, rng);
  CHECK(info_nce<double>(a, b, t).grad_log_scale == 0.0);
  CHECK(info_nce<double>(a, b, Temperature::fixed(0.2)).grad_log_scale == 0.0);
}

TEST_CASE("composite losses") {
  Rng rng(6);
  const MatD v = random_unit(6, 5, rng), a = random_unit(6, 5, rng), t = random_unit(6, 5, rng);
  const Temperature temp;
  IndexPairs diag;
  for (int i = 0; i < 6; ++i) diag.push_back({i, i});

  SUBCASE("tri minus bibi is the audio-text term, exactly") {
    const double tri = loss_tri<double>(v, a, t, temp).value;
    const double bibi = loss_bibi<double>(v, a, t, {diag, diag}, temp).value;
    const double at = info_nce<double>(a, t, temp).value;
    const double va = info_nce<double>(v, a, temp).value;
    const double vt = info_nce<double>(v, t, temp).value;
    CHECK(bibi == va + vt);
    CHECK(tri == bibi + at);
    CHECK(tri - (bibi + at) == 0.0);
  }
  SUBCASE("identical batches double the self-aligned loss") {
    CHECK(loss_bibi<double>(v, v, v, {diag, diag}, temp).value == 2 * info_nce<double>(v, v, temp).value);
  }
  SUBCASE("both pairings required") {
    CHECK_THROWS(loss_bibi<double>(v, a, t, {{}, diag}, temp));
    CHECK_THROWS(loss_bibi<double>(v, a, t, {diag, {}}, temp));
  }
  SUBCASE("disjoint pairings index their own rows") {
    const IndexPairs va{{0, 1}, {1, 3}, {2, 5}};
    const IndexPairs vt{{3, 0}, {4, 2}, {5, 4}};
    const auto r = loss_bibi<double>(v, a, t, {va, vt}, temp);
    CHECK(r.grad_audio.row(0).isZero(0.0));
    CHECK(r.grad_text.row(1).isZero(0.0));
    CHECK_FALSE(r.grad_image.row(0).isZero(0.0));
  }
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(7);
  const int n = 6, d = 5;
  const MatD a = random_unit(n, d, rng), b = random_unit(n, d, rng), c = random_unit(n, d, rng);
  Temperature temp;
  temp.log_scale = std::log(1 / 0.3);

  SUBCASE("info_nce, both inputs and the scale") {
    const auto l = info_nce<double>(a, b, temp);
    std::vector<double> x = flat(a);
    check_close(flat(l.grad_a), testing::central_difference(x, [&](const std::vector<double>& p) {
                  return info_nce<double>(unflat(p, n, d), b, temp).value;
                }));
    x = flat(b);
    check_close(flat(l.grad_b), testing::central_difference(x, [&](const std::vector<double>& p) {
                  return info_nce<double>(a, unflat(p, n, d), temp).value;
                }));
    std::vector<double> s{temp.log_scale};
    check_close(std::vector<double>{l.grad_log_scale}, testing::central_difference(s, [&](const std::vector<double>& p) {
                  Temperature t2 = temp;
                  t2.log_scale = p[0];
                  return info_nce<double>(a, b, t2).value;
                }));
  }
  SUBCASE("loss_tri") {
    const auto l = loss_tri<double>(a, b, c, temp);
    std::vector<double> x = flat(b);
    check_close(flat(l.grad_audio), testing::central_difference(x, [&](const std::vector<double>& p) {
                  return loss_tri<double>(a, unflat(p, n, d), c, temp).value;
                }));
  }
  SUBCASE("loss_bibi with uneven pairings") {
    const BiBiPairing pr{{{0, 1}, {2, 2}, {4, 0}}, {{1, 5}, {3, 3}, {5, 4}, {0, 0}}};
    const auto l = loss_bibi<double>(a, b, c, pr, temp);
    std::vector<double> x = flat(a);
    check_close(flat(l.grad_image), testing::central_difference(x, [&](const std::vector<double>& p) {
                  return loss_bibi<double>(unflat(p, n, d), b, c, pr, temp).value;
                }));
  }
}

TEST_CASE("frozen-pivot steps") {
  Rng rng(8);
  ModalEncoder<double> image(tiny_image(), 1);
  ModalEncoder<double> audio(tiny_audio(), 2);
  image.set_frozen(true);
  const auto imgs = random_images(5, 3, 8, 8, rng);
  const auto auds = random_images(5, 1, 8, 6, rng);
  const auto vin = inputs_of(imgs), ain = inputs_of(auds);
  Temperature temp;
  temp.log_scale = std::log(1 / 0.5);

  SUBCASE("audio gradient matches finite differences, image gets none") {
    for (auto& p : audio.params()) p += 0.05 * rng.normal();
    const auto r = loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp);
    CHECK(r.grad_a.empty());
    REQUIRE(r.grad_b.size() == audio.params().size());
    const auto fd = testing::central_difference(audio.params(), [&](const auto&) {
      return info_nce<double>(embed_all(image, vin), embed_all(audio, ain), temp).value;
    });
    check_close(r.grad_b, fd);
  }
  SUBCASE("precomputed pivot embeddings give the same step") {
    const MatD pivot = embed_all(image, vin);
    const auto r1 = loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp);
    const auto r2 = loss_va_frozen<double>({&image, {}, &pivot}, {&audio, ain}, temp);
    CHECK(r1.loss == r2.loss);
    CHECK(r1.grad_b == r2.grad_b);
  }
  SUBCASE("worker count does not change the gradient") {
    const auto before = loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp);
    set_worker_count(3);
    const auto after = loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp);
    set_worker_count(1);
    CHECK(before.grad_b == after.grad_b);
  }
  SUBCASE("one descent step lowers the loss") {
    const auto r = loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp);
    for (std::size_t k = 0; k < audio.params().size(); ++k) audio.params()[k] -= 1e-2 * r.grad_b[k];
    CHECK(loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp).loss < r.loss);
  }
  SUBCASE("the pivot must be frozen") {
    image.set_frozen(false);
    CHECK_THROWS(loss_va_frozen<double>({&image, vin}, {&audio, ain}, temp));
  }
  SUBCASE("precomputed embeddings are refused for a trainable tower") {
    const MatD fake = MatD::Zero(5, 8);
    CHECK_THROWS(contrastive_step<double>({&image, vin}, {&audio, {}, &fake}, temp));
  }
}

TEST_CASE("audio-text step") {
  Rng rng(9);
  ModalEncoder<double> audio(tiny_audio(), 3);
  ModalEncoder<double> text(tiny_text(), 4);
  const auto auds = random_images(4, 1, 8, 6, rng);
  const auto ain = inputs_of(auds);
  const std::vector<std::vector<int>> caps{{1, 2}, {3, 4, 5}, {6}, {7, 8, 2, 1}};
  std::vector<EncoderInput> tin;
  for (const auto& c : caps) tin.push_back(EncoderInput::of(std::span<const int>(c)));
  const Temperature temp;

  CHECK_THROWS(loss_at<double>({&audio, ain}, {&text, tin}, temp));
  text.set_frozen(true);
  const auto r = loss_at<double>({&audio, ain}, {&text, tin}, temp);
  CHECK(r.grad_b.empty());
  CHECK(r.grad_a.size() == audio.params().size());
  // Last block only: everything before it stays zero.
  const auto partial = loss_at<double>({&audio, ain, nullptr, 1}, {&text, tin}, temp);
  CHECK(view(partial.grad_a.data(), audio.layout()[audio.slots().embed]).isZero(0.0));
  CHECK_FALSE(view(partial.grad_a.data(), audio.layout()[audio.slots().proj]).isZero(0.0));
}
