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


#include "dsre/evaluation.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dsre/encoders.hpp"
#include "dsre/inference.hpp"
#include "test_util.hpp"

namespace dsre {
namespace {

using testing::table_bag;
using testing::TableModel;

// --- predict_bag / select_instance ---------------------------------------

TEST(SelectInstance, ArgmaxAndTies) {
  TableModel m({{0.8, 0.2}, {0.3, 0.7}, {0.5, 0.5}, {0.5, 0.5}});
  EXPECT_EQ(select_instance(table_bag("b", {0, 1}), 1, m), 1u);
  EXPECT_EQ(select_instance(table_bag("b", {1}), 0, m), 0u);
  EXPECT_EQ(select_instance(table_bag("b", {2, 3}), 1, m), 0u);
}

TEST(PredictBag, PerRelationMax) {
  TableModel m({{0.9, 0.1}, {0.2, 0.8}});
  const auto single = predict_bag(table_bag("b", {1}), m);
  EXPECT_EQ(single.probs.values()[0], 0.2);
  EXPECT_EQ(single.probs.values()[1], 0.8);
  const auto two = predict_bag(table_bag("b", {0, 1}), m);
  EXPECT_EQ(two.probs.values()[0], 0.9);
  EXPECT_EQ(two.probs.values()[1], 0.8);
}

TEST(PredictBag, MatchesEnumerationOracle) {
  Rng rng(3);
  for (auto kind : {ModelKind::kPcnn, ModelKind::kBgwa, ModelKind::kEa}) {
    auto model = make_model(testing::small_config(kind, 12, 4));
    model->initialize(rng);
    InstanceBag bag;
    bag.bag_id = "x";
    bag.labels = {1};
    for (int i = 0; i < 5; ++i) bag.instances.push_back(testing::random_instance(rng, 6, 12));
    const auto out = predict_bag(bag, *model, RelationId{2});
    for (std::size_t r = 0; r < 4; ++r) {
      double best = -1;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < bag.instances.size(); ++i) {
        const double p = model->predict(bag.instances[i]).probs[r];
        if (p > best) best = p, arg = i;
      }
      EXPECT_EQ(out.probs[r], best);
      EXPECT_GE(out.probs[r], 0.0);
      EXPECT_LE(out.probs[r], 1.0);
      if (r == 2) EXPECT_EQ(out.attention, model->predict(bag.instances[arg]).attention);
    }
  }
}

// --- score_corpus ------------------------------------------------------------

TEST(ScoreCorpus, EmitsNonNaRelationsOnly) {
  TableModel m({{0.5, 0.3, 0.2}, {0.1, 0.1, 0.8}});
  std::vector<InstanceBag> bags = {table_bag("a", {0}), table_bag("b", {1, 0})};
  const auto preds = score_corpus(m, bags);
  ASSERT_EQ(preds.size(), 4u);
  for (const auto& p : preds) EXPECT_GE(p.relation, 1u);
  const auto scores = score_matrix(m, bags);
  for (const auto& p : preds) {
    const std::size_t row = p.bag_id == "a" ? 0 : 1;
    EXPECT_EQ(p.score, predict_bag(bags[row], m).probs[p.relation]);
    EXPECT_EQ(p.score, scores(row, p.relation));
  }
}

TEST(ScoreCorpus, ThreadedMatchesSequential) {
  Rng rng(8);
  auto model = make_model(testing::small_config(ModelKind::kEa, 12, 3));
  model->initialize(rng);
  std::vector<InstanceBag> bags;
  for (int b = 0; b < 17; ++b) {
    InstanceBag bag;
    bag.bag_id = "b" + std::to_string(b);
    bag.labels = {0};
    for (int i = 0; i < 3; ++i) bag.instances.push_back(testing::random_instance(rng, 5, 12));
    bags.push_back(bag);
  }
  EXPECT_EQ(score_matrix(*model, bags, 1), score_matrix(*model, bags, 4));
}

TEST(GoldFacts, ExcludesNa) {
  std::vector<InstanceBag> bags = {table_bag("a", {0}, {0}), table_bag("b", {0}, {0, 2}),
                                   table_bag("c", {0}, {1})};
  const GoldSet gold = gold_facts(bags);
  EXPECT_EQ(gold, (GoldSet{{"b", 2}, {"c", 1}}));
  bags.erase(bags.begin());
  EXPECT_EQ(gold_facts(bags), gold);
}

// --- pr_curve ------------------------------------------------------------------

TEST(PrCurve, HandTrace) {
  const auto c = pr_curve({{"A", 1, 0.9}, {"B", 1, 0.8}}, {{"A", 1}});
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0], (PrPoint{1.0, 1.0}));
  EXPECT_EQ(c.points[1], (PrPoint{1.0, 0.5}));
  EXPECT_EQ(c.auc, 1.0);
}

TEST(PrCurve, EmptyGoldIsDomainError) {
  EXPECT_THROW(pr_curve({{"A", 1, 0.9}}, {}), DomainError);
}

TEST(PrCurve, PerfectRanking) {
  std::vector<PredictionRecord> preds;
  GoldSet gold;
  for (int i = 0; i < 7; ++i) {
    preds.push_back({"g" + std::to_string(i), 1, 1.0 - i * 0.01});
    gold.insert({"g" + std::to_string(i), 1});
  }
  for (int i = 0; i < 20; ++i) preds.push_back({"n" + std::to_string(i), 2, 0.5 - i * 0.01});
  const auto c = pr_curve(preds, gold);
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(c.points[k].precision, 1.0);
  EXPECT_EQ(c.auc, 1.0);
}

TEST(PrCurve, ZeroHits) {
  const auto c = pr_curve({{"A", 1, 0.9}, {"B", 2, 0.3}}, {{"C", 1}});
  for (const auto& p : c.points) EXPECT_EQ(p.precision, 0.0);
  EXPECT_EQ(c.auc, 0.0);
}

TEST(PrCurve, TieBreakIsDeterministic) {
  const std::vector<PredictionRecord> a = {{"b", 1, 0.5}, {"a", 2, 0.5}, {"a", 1, 0.5}};
  const auto ranked = rank_predictions(a);
  EXPECT_EQ(ranked[0], (PredictionRecord{"a", 1, 0.5}));
  EXPECT_EQ(ranked[1], (PredictionRecord{"a", 2, 0.5}));
  EXPECT_EQ(ranked[2], (PredictionRecord{"b", 1, 0.5}));
}

// Rank of each prediction by pairwise comparison, then hits by counting.
TEST(PrCurve, MatchesCountingOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<PredictionRecord> preds;
    GoldSet gold;
    for (int i = 0; i < 200; ++i) {
      // Coarse scores force plenty of ties.
      preds.push_back({"b" + std::to_string(rng.below(80)), 1 + rng.below(3),
                       static_cast<double>(rng.below(40)) / 40.0});
    }
    for (int i = 0; i < 60; ++i) {
      gold.insert({"b" + std::to_string(rng.below(80)), 1 + rng.below(3)});
    }
    const auto curve = pr_curve(preds, gold);
    ASSERT_EQ(curve.points.size(), preds.size());
    auto before = [](const PredictionRecord& x, const PredictionRecord& y) {
      if (x.score != y.score) return x.score > y.score;
      if (x.bag_id != y.bag_id) return x.bag_id < y.bag_id;
      return x.relation < y.relation;
    };
    std::vector<std::size_t> rank(preds.size(), 0);
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (std::size_t j = 0; j < preds.size(); ++j)
        if (j != i && (before(preds[j], preds[i]) ||
                       (!before(preds[i], preds[j]) && j < i)))
          ++rank[i];
    for (std::size_t k = 1; k <= preds.size(); ++k) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (rank[i] < k && gold.count({preds[i].bag_id, preds[i].relation})) ++hits;
      EXPECT_DOUBLE_EQ(curve.points[k - 1].precision, double(hits) / k) << "rank " << k;
      EXPECT_DOUBLE_EQ(curve.points[k - 1].recall, double(hits) / gold.size()) << "rank " << k;
    }
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
      EXPECT_GE(curve.points[k].recall, curve.points[k - 1].recall);
    }
    EXPECT_GE(curve.auc, 0.0);
    EXPECT_LE(curve.auc, 1.0);
  }
}

TEST(PrCurve, InvariantUnderMonotoneTransform) {
  Rng rng(4);
  std::vector<PredictionRecord> preds;
  GoldSet gold;
  for (int i = 0; i < 100; ++i) {
    preds.push_back({"b" + std::to_string(i), 1, rng.uniform()});
    if (rng.bernoulli(0.3)) gold.insert({"b" + std::to_string(i), 1});
  }
  auto mapped = preds;
  for (auto& p : mapped) p.score = std::exp(3 * p.score) - 7;
  const auto a = pr_curve(preds, gold), b = pr_curve(mapped, gold);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.auc, b.auc);
}

TEST(PrAuc, TrapezoidAndCap) {
  const std::vector<PrPoint> pts = {{0.5, 1.0}, {1.0, 0.5}};
  EXPECT_DOUBLE_EQ(pr_auc(pts), 0.875);
  EXPECT_DOUBLE_EQ(pr_auc(pts, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(pr_auc(pts, 0.75), 0.5 + 0.25 * (1.0 + 0.75) / 2);
  EXPECT_EQ(pr_auc({}), 0.0);
}

// --- p_at_n --------------------------------------------------------------------

TEST(PAtN, HandCases) {
  const std::vector<PredictionRecord> preds = {{"A", 1, 0.9}, {"B", 1, 0.8}, {"C", 1, 0.1}};
  const GoldSet gold = {{"A", 1}};
  EXPECT_EQ(p_at_n(preds, gold, 1).precision, 1.0);
  EXPECT_EQ(p_at_n(preds, gold, 2).precision, 0.5);
  EXPECT_FALSE(p_at_n(preds, gold, 3).truncated);
  const auto over = p_at_n(preds, gold, 10);
  EXPECT_TRUE(over.truncated);
  EXPECT_EQ(over.used, 3u);
  EXPECT_DOUBLE_EQ(over.precision, 1.0 / 3);
  EXPECT_THROW(p_at_n(preds, gold, 0), DomainError);
}

TEST(PAtN, AgreesWithCurve) {
  Rng rng(9);
  std::vector<PredictionRecord> preds;
  GoldSet gold;
  for (int i = 0; i < 150; ++i) {
    preds.push_back({"b" + std::to_string(i), 1 + rng.below(2), rng.uniform()});
    if (rng.bernoulli(0.4)) gold.insert({preds.back().bag_id, preds.back().relation});
  }
  const auto curve = pr_curve(preds, gold);
  for (std::size_t n : {1, 10, 77, 150}) {
    EXPECT_DOUBLE_EQ(p_at_n(preds, gold, n).precision, curve.points[n - 1].precision);
  }
}

// --- files ---------------------------------------------------------------------

TEST(PredictionsTsv, RoundTrip) {
  RelationSchema schema({"NA", "born_in", "died_in"});
  const std::vector<PredictionRecord> preds = {{"a|b", 1, 0.125}, {"c|d", 2, 1.0 / 3}};
  std::stringstream ss;
  write_predictions_tsv(ss, preds, schema);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "bag_id\trelation\tscore");
  EXPECT_EQ(read_predictions_tsv(ss, schema, "mem"), preds);
}

TEST(Report, ListsAucAndPrecisionAtN) {
  std::stringstream ss;
  const std::vector<PredictionRecord> preds = {{"A", 1, 0.9}};
  write_report(ss, preds, {{"A", 1}}, pr_curve(preds, {{"A", 1}}));
  const std::string s = ss.str();
  EXPECT_NE(s.find("auc 1\n"), std::string::npos);
  EXPECT_NE(s.find("p@100 1 (only 1 predictions)"), std::string::npos);
  EXPECT_NE(s.find("p@300"), std::string::npos);
}

// --- attention export -------------------------------------------------------

TEST(ExportAttention, ColumnsNormalizedAndSized) {
  Rng rng(6);
  for (auto kind : {ModelKind::kBgwa, ModelKind::kEa}) {
    auto model = make_model(testing::small_config(kind, 12, 3));
    model->initialize(rng);
    InstanceBag bag;
    bag.bag_id = "q";
    bag.labels = {1};
    for (int i = 0; i < 3; ++i) bag.instances.push_back(testing::random_instance(rng, 4 + i, 12));
    const auto table = export_attention(*model, bag, 1);
    const auto& inst = bag.instances[select_instance(bag, 1, *model)];
    EXPECT_EQ(table.tokens, inst.raw_tokens);
    EXPECT_EQ(table.columns.size(), kind == ModelKind::kBgwa ? 1u : 2u);
    for (const auto& [name, col] : table.columns) {
      EXPECT_EQ(col.size(), inst.length());
      EXPECT_NEAR(testing::sum_of(col), 1.0, 1e-9) << name;
    }
    std::stringstream csv;
    write_attention_csv(csv, table);
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, kind == ModelKind::kBgwa ? "token,word" : "token,entity1,entity2");
  }
}

TEST(ExportAttention, PcnnUnsupported) {
  Rng rng(1);
  auto model = make_model(testing::small_config(ModelKind::kPcnn));
  model->initialize(rng);
  InstanceBag bag;
  bag.instances.push_back(testing::random_instance(rng, 4, 12));
  EXPECT_THROW(export_attention(*model, bag, 1), ConfigError);
}

TEST(Csv, QuotesSpecialFields) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"x\""), "\"say \"\"x\"\"\"");
}

}  // namespace
}  // namespace dsre
