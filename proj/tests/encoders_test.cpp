// Copyright 2026 The dsre Authors.
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

#include "dsre/encoders.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dsre {
namespace {

using testing::bilinear_loop;
using testing::model_grad_error;
using testing::random_instance;
using testing::random_tensor;
using testing::scan_segments;
using testing::small_config;
using testing::sum_of;

void zero_all(const ParameterList& params) {
  for (Parameter* p : params) p->value.fill(0.0);
}

TEST(Pcnn, ZeroParametersGiveUniformProbabilities) {
  PcnnModel model(small_config(ModelKind::kPcnn, 12, 4));
  Rng rng(1);
  model.initialize(rng);
  zero_all(model.params().parameters());
  const auto out = model.predict(random_instance(rng, 6, 12));
  for (double p : out.probs.values()) EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_TRUE(out.attention.empty());
}

TEST(Pcnn, SingleTokenPoolsSameRowThreeTimes) {
  Rng rng(2);
  PcnnParams params(4, 3, 5, 3);
  for (Parameter* p : params.parameters()) testing::randomize(*p, rng);
  const Tensor x = random_tensor(rng, {1, 5});
  PcnnTrace tr;
  pcnn_forward(x, 0, 0, params, {}, &tr);
  for (std::size_t ch = 0; ch < 4; ++ch) {
    EXPECT_EQ(tr.conv.pool.pooled[ch], tr.conv.conv(0, ch));
    EXPECT_EQ(tr.conv.pool.pooled[4 + ch], tr.conv.conv(0, ch));
    EXPECT_EQ(tr.conv.pool.pooled[8 + ch], tr.conv.conv(0, ch));
  }
}

TEST(Pcnn, ConvolutionIsZeroPaddedSameLength) {
  // Window 3 over 1-d input with filter [1, 10, 100]: out_t = x_{t-1} + 10 x_t + 100 x_{t+1}.
  ConvPoolParams p("c", 1, 3, 1);
  p.filters.value = Tensor({1, 3}, {1, 10, 100});
  const Tensor x({3, 1}, {1, 2, 3});
  const Tensor conv = conv1d(x, p);
  EXPECT_EQ(conv.raw(), (std::vector<double>{210, 321, 32}));
}

TEST(Pcnn, GradientMatchesFiniteDifferences) {
  ModelConfig cfg = small_config(ModelKind::kPcnn, 12, 3);
  PcnnModel model(cfg);
  Rng rng(3);
  model.initialize(rng);
  const auto inst = random_instance(rng, 6, 12);
  EXPECT_LT(model_grad_error(model, inst, 1, false, 17), 1e-4);
  EXPECT_LT(model_grad_error(model, inst, 2, true, 18), 1e-4);
}

TEST(Gru, ZeroWeightStepHalvesState) {
  GruParams p("g", 2, 1);
  const std::vector<double> x = {0.3, -0.7}, hprev = {1.0};
  const GruStep s = gru_step(p, x, hprev);
  EXPECT_EQ(s.z[0], 0.5);
  EXPECT_EQ(s.hc[0], 0.0);
  EXPECT_EQ(s.h[0], 0.5);
}

TEST(Gru, PalindromeWithTiedWeightsIsMirrorSymmetric) {
  Rng rng(4);
  BiGruParams p(3, 4);
  for (Parameter* q : p.forward.parameters()) testing::randomize(*q, rng);
  auto fwd = p.forward.parameters(), bwd = p.backward.parameters();
  for (std::size_t i = 0; i < fwd.size(); ++i) bwd[i]->value = fwd[i]->value;
  Tensor x({5, 3});
  const Tensor half = random_tensor(rng, {3, 3});
  for (std::size_t j = 0; j < 5; ++j) {
    const std::size_t src = j < 3 ? j : 4 - j;
    for (std::size_t k = 0; k < 3; ++k) x(j, k) = half(src, k);
  }
  const Tensor w = bigru_forward(x, p);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(w(t, k), w(4 - t, 4 + k), 1e-14);
}

TEST(Gru, BackpropThroughTimeMatchesFiniteDifferences) {
  Rng rng(5);
  BiGruParams p(3, 2);
  for (Parameter* q : p.parameters()) testing::randomize(*q, rng);
  Parameter x("x", {4, 3});
  testing::randomize(x, rng);
  const Tensor weights = random_tensor(rng, {4, 4});
  auto loss = [&] {
    const Tensor w = bigru_forward(x.value, p);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += weights[i] * w[i];
    return s;
  };
  BiGruTrace tr;
  bigru_forward(x.value, p, &tr);
  bigru_backward(x.value, tr, weights, p, &x.grad);
  double worst = grad_check(loss, x);
  for (Parameter* q : p.parameters()) worst = std::max(worst, grad_check(loss, *q));
  EXPECT_LT(worst, 1e-4);
}

TEST(WordAttention, IdenticalWordsAreUniform) {
  Rng rng(6);
  const Tensor row = random_tensor(rng, {1, 4});
  Tensor w({2, 4});
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t k = 0; k < 4; ++k) w(j, k) = row(0, k);
  const auto a = word_attention(w, random_tensor(rng, {4, 4}), random_tensor(rng, {4}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
}

TEST(WordAttention, IdentityBilinearIsProjection) {
  Rng rng(7);
  const Tensor w = random_tensor(rng, {5, 3});
  const Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto s = bilinear_attention(w, eye, Tensor::vector({1, 0, 0}));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(s.u[j], w(j, 0));
}

TEST(WordAttention, MatchesDoubleLoopOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor w = random_tensor(rng, {6, 5});
    const Tensor A = random_tensor(rng, {5, 5});
    const Tensor r = random_tensor(rng, {5});
    const auto s = bilinear_attention(w, A, r);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(s.u[j], bilinear_loop(w.row(j), A, r), 1e-12);
    EXPECT_NEAR(sum_of(s.a), 1.0, 1e-12);
  }
}

TEST(WordAttention, ShapeMismatch) {
  EXPECT_THROW(word_attention(Tensor({3, 4}), Tensor({3, 3}), Tensor({3})), DimensionError);
  EXPECT_THROW(word_attention(Tensor({3, 4}), Tensor({4, 4}), Tensor({3})), DimensionError);
}

TEST(Bgwa, UniformAttentionScalesPooledStates) {
  Rng rng(9);
  BgwaParams params(5, 3, 3);
  for (Parameter* p : params.parameters()) testing::randomize(*p, rng);
  params.attn_matrix.value.fill(0.0);
  const Tensor x = random_tensor(rng, {4, 5});
  BgwaTrace tr;
  bgwa_forward(x, 1, 2, params, {}, &tr);
  const auto raw = scan_segments(tr.states, 1, 2);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    EXPECT_NEAR(tr.pool.pooled[i], raw[i] / 4.0, 1e-15);
  }
  const auto unscaled = piecewise_max_pool(tr.states, 1, 2);
  EXPECT_EQ(tr.pool.argmax, unscaled.argmax);
}

TEST(Bgwa, PeakedAttentionIsDominatedByOneWord) {
  Rng rng(10);
  BgwaParams params(5, 3, 3);
  for (Parameter* p : params.parameters()) testing::randomize(*p, rng);
  const Tensor x = random_tensor(rng, {6, 5});
  const Tensor w = bigru_forward(x, params.gru);
  // Query along word 3's state with a large identity bilinear form.
  params.attn_matrix.value.fill(0.0);
  for (std::size_t k = 0; k < 6; ++k) params.attn_matrix.value(k, k) = 1e4;
  for (std::size_t k = 0; k < 6; ++k) params.attn_query.value[k] = w(3, k);
  std::size_t peak = 0;
  for (std::size_t j = 1; j < 6; ++j) {
    if (dot(w.row(j), w.row(3)) > dot(w.row(peak), w.row(3))) peak = j;
  }
  BgwaTrace tr;
  const auto out = bgwa_forward(x, 1, 4, params, {}, &tr);
  EXPECT_GT(out.attention.at("word")[peak], 0.999);
  EXPECT_EQ(tr.pool.pooled.raw(), scan_segments(scale_rows(w, tr.attention.a), 1, 4));
  // Channels where the peaked word's row wins take (almost) its full value.
  for (std::size_t i = 0; i < tr.pool.argmax.size(); ++i) {
    if (tr.pool.argmax[i] == peak) {
      EXPECT_NEAR(tr.pool.pooled[i], w(peak, i % 6), 1e-3 * std::abs(w(peak, i % 6)) + 1e-12);
    }
  }
}

TEST(Bgwa, GradientMatchesFiniteDifferences) {
  BgwaModel model(small_config(ModelKind::kBgwa, 12, 3));
  Rng rng(11);
  model.initialize(rng);
  const auto inst = random_instance(rng, 5, 12);
  EXPECT_LT(model_grad_error(model, inst, 0, false, 21), 1e-4);
  EXPECT_LT(model_grad_error(model, inst, 2, true, 22), 1e-4);
}

TEST(EntityAttention, IdenticalWordsAreUniform) {
  Rng rng(12);
  Tensor x({3, 4});
  const Tensor row = random_tensor(rng, {4});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 4; ++k) x(j, k) = row[k];
  const std::vector<double> e = {0.1, 0.2};
  const auto a = entity_attention(x, e, random_tensor(rng, {6, 6}), random_tensor(rng, {6}));
  for (double v : a) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
}

TEST(EntityAttention, EntityOnlyQueryIsUniform) {
  Rng rng(13);
  const Tensor x = random_tensor(rng, {5, 4});
  const std::vector<double> e = {0.3, -0.2};
  Tensor eye({6, 6});
  for (std::size_t k = 0; k < 6; ++k) eye(k, k) = 1.0;
  const Tensor r({6}, {0, 0, 0, 0, 1, 1});
  const auto a = entity_attention(x, e, eye, r);
  for (double v : a) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(EntityAttention, MatchesDoubleLoopOracle) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng, {5, 4});
    const Tensor e = random_tensor(rng, {3});
    const Tensor A = random_tensor(rng, {7, 7});
    const Tensor r = random_tensor(rng, {7});
    const auto s = entity_attention_scores(x, e.values(), A, r);
    std::vector<double> u(5);
    for (std::size_t j = 0; j < 5; ++j) {
      std::vector<double> z(x.row(j).begin(), x.row(j).end());
      z.insert(z.end(), e.values().begin(), e.values().end());
      u[j] = bilinear_loop(z, A, r);
      EXPECT_NEAR(s.u[j], u[j], 1e-12);
    }
    // Weights equal the softmax of the full scores.
    const auto a = softmax(u);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(s.a[j], a[j], 1e-12);
  }
}

TEST(Ea, ZeroOutputWeightsGiveUniformProbabilities) {
  EaModel model(small_config(ModelKind::kEa, 12, 5));
  Rng rng(15);
  model.initialize(rng);
  model.params().output.weight.value.fill(0.0);
  const auto out = model.predict(random_instance(rng, 7, 12));
  for (double p : out.probs.values()) EXPECT_DOUBLE_EQ(p, 0.2);
  EXPECT_NEAR(sum_of(out.attention.at("entity1")), 1.0, 1e-12);
  EXPECT_NEAR(sum_of(out.attention.at("entity2")), 1.0, 1e-12);
}

TEST(Ea, ZeroedEntityBranchReproducesPcnnExactly) {
  const ModelConfig cfg = small_config(ModelKind::kEa, 12, 3);
  PcnnModel pcnn(cfg);
  EaModel ea(cfg);
  Rng rng(16);
  pcnn.initialize(rng);
  ea.initialize(rng);
  auto pe = pcnn.embedding().parameters(), ee = ea.embedding().parameters();
  for (std::size_t i = 0; i < pe.size(); ++i) ee[i]->value = pe[i]->value;
  ea.params().conv.filters.value = pcnn.params().conv.filters.value;
  ea.params().conv.bias.value = pcnn.params().conv.bias.value;
  ea.params().output.bias.value = pcnn.params().output.bias.value;
  auto& w = ea.params().output.weight.value;
  w.fill(0.0);
  const std::size_t c3 = 3 * cfg.filters;
  for (std::size_t r = 0; r < cfg.num_relations; ++r)
    for (std::size_t k = 0; k < c3; ++k) w(r, k) = pcnn.params().output.weight.value(r, k);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(rng, 2 + rng.below(8), 12);
    EXPECT_EQ(ea.predict(inst).probs, pcnn.predict(inst).probs);
  }
}

TEST(Ea, GradientMatchesFiniteDifferences) {
  EaModel model(small_config(ModelKind::kEa, 12, 3));
  Rng rng(17);
  model.initialize(rng);
  auto inst = random_instance(rng, 5, 12);
  EXPECT_LT(model_grad_error(model, inst, 1, false, 23), 1e-4);
  // Multi-token entity spans exercise the averaged entity embedding.
  inst.e1_span = {0, 2};
  inst.e1_idx = 1;
  inst.e2_span = {3, 5};
  inst.e2_idx = 4;
  auto pos = position_features(5, 1, 4, 5);
  inst.pos1 = pos.pos1;
  inst.pos2 = pos.pos2;
  EXPECT_LT(model_grad_error(model, inst, 2, true, 24), 1e-4);
}

TEST(Models, OutputsAreDistributionsAndDeterministic) {
  Rng rng(18);
  for (ModelKind kind : {ModelKind::kPcnn, ModelKind::kBgwa, ModelKind::kEa}) {
    auto model = make_model(small_config(kind, 12, 4));
    model->initialize(rng);
    for (int trial = 0; trial < 30; ++trial) {
      const auto inst = random_instance(rng, 1 + rng.below(10), 12);
      const auto out = model->predict(inst);
      EXPECT_NEAR(sum_of(out.probs.raw()), 1.0, 1e-9);
      for (const auto& [name, a] : out.attention) {
        EXPECT_EQ(a.size(), inst.length());
        EXPECT_NEAR(sum_of(a), 1.0, 1e-9) << name;
      }
      EXPECT_EQ(out.probs, model->predict(inst).probs);
      Rng r1(99), r2(99);
      EXPECT_EQ(model->forward(inst, model->train_options(&r1), nullptr).probs,
                model->forward(inst, model->train_options(&r2), nullptr).probs);
    }
  }
}

TEST(Models, EntitiesInReverseSurfaceOrder) {
  Rng rng(19);
  auto model = make_model(small_config(ModelKind::kEa, 12, 3));
  model->initialize(rng);
  auto inst = random_instance(rng, 6, 12);
  inst.e1_span = {4, 5};
  inst.e1_idx = 4;
  inst.e2_span = {1, 2};
  inst.e2_idx = 1;
  auto pos = position_features(6, 4, 1, 5);
  inst.pos1 = pos.pos1;
  inst.pos2 = pos.pos2;
  EXPECT_NO_THROW(model->predict(inst));
  EXPECT_LT(model_grad_error(*model, inst, 1, false, 3), 1e-4);
}

TEST(Models, WordIdOutsideVocabulary) {
  Rng rng(20);
  auto model = make_model(small_config(ModelKind::kPcnn, 12, 3));
  auto inst = random_instance(rng, 4, 12);
  inst.word_ids[2] = 99;
  EXPECT_THROW(model->predict(inst), IndexError);
}

TEST(Models, ConfigValidation) {
  ModelConfig cfg = small_config(ModelKind::kPcnn);
  cfg.window = 2;
  EXPECT_THROW(PcnnModel{cfg}, ConfigError);
  EXPECT_THROW(parse_model_kind("cnn"), ConfigError);
}

}  // namespace
}  // namespace dsre
