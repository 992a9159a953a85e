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


#include "dsre/training.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dsre/checkpoint.hpp"
#include "dsre/config.hpp"
#include "dsre/synthetic.hpp"
#include "test_util.hpp"

namespace dsre {
namespace {

using testing::table_bag;
using testing::TableModel;

// --- config -------------------------------------------------------------------

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.lr, 0.1);
  EXPECT_EQ(c.batch_size, 50u);
  EXPECT_EQ(c.dropout, 0.5);
  EXPECT_EQ(c.d_w, 50u);
  EXPECT_EQ(c.d_p, 5u);
  EXPECT_EQ(c.model_config(100, 5).input_dim(), 60u);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, ParsesKeyValueText) {
  TrainConfig c;
  std::istringstream in("# comment\nlr = 0.05\n\nmodel=ea  # trailing\nbatch_size=7\n");
  apply_config_text(c, in, "cfg");
  EXPECT_EQ(c.lr, 0.05);
  EXPECT_EQ(c.model, ModelKind::kEa);
  EXPECT_EQ(c.batch_size, 7u);
  EXPECT_EQ(c.d_w, 50u);
}

TEST(TrainConfig, Errors) {
  TrainConfig c;
  std::istringstream unknown("learning_rate=1\n");
  EXPECT_THROW(apply_config_text(c, unknown, "cfg"), ConfigError);
  std::istringstream bad("batch_size=ten\n");
  try {
    apply_config_text(c, bad, "cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:1:"), std::string::npos);
  }
  std::istringstream noeq("lr\n");
  EXPECT_THROW(apply_config_text(c, noeq, "cfg"), ConfigError);
  c = TrainConfig{};
  c.w = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c;
  c.lr = 1.0 / 3;
  c.model = ModelKind::kBgwa;
  c.seed = 18446744073709551615ull;
  TrainConfig back;
  std::istringstream in(config_text(c));
  apply_config_text(back, in, "rt");
  EXPECT_EQ(back, c);
}

// --- checkpoint -------------------------------------------------------------

TEST(Checkpoint, RoundTripEveryModel) {
  Rng rng(2);
  Vocabulary vocab;
  for (int i = 0; i < 10; ++i) vocab.add("w" + std::to_string(i));
  RelationSchema schema({"NA", "r1", "r2"});
  for (auto kind : {ModelKind::kPcnn, ModelKind::kBgwa, ModelKind::kEa}) {
    auto model = make_model(testing::small_config(kind, vocab.size(), schema.size()));
    model->initialize(rng);
    std::stringstream buf;
    save_checkpoint(buf, *model, schema, vocab);
    const auto ck = load_checkpoint(buf, "mem");
    EXPECT_EQ(ck.model->config(), model->config());
    EXPECT_EQ(ck.schema, schema);
    EXPECT_EQ(ck.vocab.words(), vocab.words());
    EXPECT_EQ(ck.model->snapshot(), model->snapshot());
    const auto inst = testing::random_instance(rng, 6, vocab.size());
    EXPECT_EQ(ck.model->predict(inst).probs, model->predict(inst).probs);
  }
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  Rng rng(2);
  Vocabulary vocab;
  RelationSchema schema({"NA", "r1"});
  auto model = make_model(testing::small_config(ModelKind::kPcnn, vocab.size(), 2));
  model->initialize(rng);
  std::stringstream buf;
  save_checkpoint(buf, *model, schema, vocab);
  const std::string bytes = buf.str();

  ModelConfig other = model->config();
  other.filters += 1;
  std::istringstream a(bytes);
  EXPECT_THROW(load_checkpoint(a, "x", &other), ConfigError);
  std::istringstream same(bytes);
  ModelConfig exact = model->config();
  EXPECT_NO_THROW(load_checkpoint(same, "x", &exact));

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(truncated, "x"), ParseError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  std::istringstream bad_magic(wrong);
  EXPECT_THROW(load_checkpoint(bad_magic, "x"), ParseError);
  std::istringstream trailing(bytes + "z");
  EXPECT_THROW(load_checkpoint(trailing, "x"), ParseError);

  Vocabulary bigger;
  bigger.add("extra");
  EXPECT_THROW(save_checkpoint(buf, *model, schema, bigger), ConfigError);
}

// --- train_example ----------------------------------------------------------

TEST(TrainExample, ClosedFormLosses) {
  Rng rng(1);
  TableModel uniform({{0.2, 0.2, 0.2, 0.2, 0.2}});
  EXPECT_NEAR(train_example(table_bag("u", {0}), 3, uniform, rng), std::log(5.0), 1e-12);
  TableModel certain({{0.0, 1.0}});
  EXPECT_EQ(train_example(table_bag("c", {0}), 1, certain, rng), 0.0);
}

TEST(TrainExample, GradientMatchesFiniteDifferences) {
  for (auto kind : {ModelKind::kPcnn, ModelKind::kBgwa, ModelKind::kEa}) {
    Rng rng(40);
    auto model = make_model(testing::small_config(kind, 12, 3));
    model->initialize(rng);
    for (Parameter* p : model->parameters()) testing::randomize(*p, rng);
    InstanceBag bag = table_bag("g", {}, {2});
    for (int i = 0; i < 3; ++i) bag.instances.push_back(testing::random_instance(rng, 6, 12));
    model->zero_grads();
    {
      Rng r(5);
      train_example(bag, 2, *model, r);
    }
    auto loss = [&] {
      const auto saved = model->parameters();
      std::vector<Tensor> grads;
      for (Parameter* p : saved) grads.push_back(p->grad);
      Rng r(5);
      const double l = train_example(bag, 2, *model, r);
      for (std::size_t i = 0; i < saved.size(); ++i) saved[i]->grad = grads[i];
      return l;
    };
    for (Parameter* p : model->parameters()) {
      EXPECT_LT(grad_check(loss, *p, 1e-5, 40, 3), 1e-4) << to_string(kind) << " " << p->name;
    }
  }
}

// --- train_epoch --------------------------------------------------------------

std::vector<InstanceBag> synthetic(std::size_t n, std::uint64_t seed, Vocabulary& vocab,
                                   RelationSchema& schema, bool grow = true,
                                   const std::string& prefix = "b") {
  Rng rng(seed);
  SyntheticOptions opts;
  opts.num_bags = n;
  opts.id_prefix = prefix;
  opts.entity_pool = 0;  // fresh names, so separately drawn sets stay pair-disjoint
  return encode_bags(synthetic_bags(opts, rng), vocab, schema, grow);
}

TrainConfig small_train_config(ModelKind kind) {
  TrainConfig c;
  c.model = kind;
  c.d_w = 8;
  c.d_p = 2;
  c.c = 16;
  c.h = 8;
  return c;
}

TEST(TrainEpoch, ExpandsOneExamplePerLabel) {
  std::vector<InstanceBag> bags = {table_bag("a", {0}, {1}), table_bag("b", {0}, {0, 1, 2})};
  const auto ex = expand_examples(bags);
  ASSERT_EQ(ex.size(), 4u);
  EXPECT_EQ(ex[1].bag, 1u);
  EXPECT_EQ(ex[3].label, 2u);
}

TEST(TrainEpoch, EmptyListIsNoOp) {
  Rng rng(3);
  auto model = make_model(testing::small_config(ModelKind::kPcnn));
  model->initialize(rng);
  const auto before = model->snapshot();
  EXPECT_EQ(train_epoch({}, *model, TrainConfig{}, rng), 0.0);
  EXPECT_EQ(model->snapshot(), before);
}

TEST(TrainEpoch, StepUsesMeanBatchGradient) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  const auto bags = synthetic(2, 11, vocab, schema);
  auto cfg = small_train_config(ModelKind::kPcnn);
  cfg.dropout = 0.0;
  cfg.batch_size = 2;
  auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
  Rng init(1);
  model->initialize(init);
  const auto start = model->snapshot();

  // Oracle: gradients of both examples at the starting point, averaged.
  auto params = model->parameters();
  zero_grads(params);
  Rng unused(0);
  for (const auto& ex : expand_examples(bags)) train_example(bags[ex.bag], ex.label, *model, unused);
  std::vector<Tensor> expected;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = start[i];
    for (std::size_t k = 0; k < t.size(); ++k) t[k] -= cfg.lr * params[i]->grad[k] / 2.0;
    expected.push_back(t);
  }

  Rng rng(4);
  train_epoch(bags, *model, cfg, rng);
  const auto after = model->snapshot();
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t k = 0; k < after[i].size(); ++k)
      ASSERT_NEAR(after[i][k], expected[i][k], 1e-12) << params[i]->name;
}

TEST(TrainEpoch, DeterministicAcrossRunsAndThreads) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  const auto bags = synthetic(40, 5, vocab, schema);
  for (auto kind : {ModelKind::kPcnn, ModelKind::kBgwa, ModelKind::kEa}) {
    auto cfg = small_train_config(kind);
    cfg.batch_size = 8;
    std::vector<std::vector<Tensor>> finals;
    std::vector<double> losses;
    for (std::size_t threads : {1, 1, 3}) {
      auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
      Rng rng(cfg.seed);
      model->initialize(rng);
      losses.push_back(train_epoch(bags, *model, cfg, rng, threads));
      finals.push_back(model->snapshot());
    }
    EXPECT_EQ(finals[0], finals[1]) << to_string(kind);
    EXPECT_EQ(finals[0], finals[2]) << to_string(kind);
    EXPECT_EQ(losses[0], losses[1]);
    EXPECT_EQ(losses[0], losses[2]);
  }
}

// Batch 50 over 50 bags is one full-batch step per epoch; without dropout
// noise that is plain gradient descent, so the epoch loss must fall.
TEST(TrainEpoch, LossDecreasesOnSeparableBags) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  const auto bags = synthetic(50, 17, vocab, schema);
  for (auto kind : {ModelKind::kPcnn, ModelKind::kBgwa, ModelKind::kEa}) {
    auto cfg = small_train_config(kind);
    cfg.dropout = 0.0;
    auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
    Rng rng(cfg.seed);
    model->initialize(rng);
    std::vector<double> losses;
    for (int e = 0; e < 5; ++e) losses.push_back(train_epoch(bags, *model, cfg, rng));
    for (std::size_t e = 1; e < losses.size(); ++e) {
      EXPECT_LT(losses[e], losses[e - 1]) << to_string(kind) << " epoch " << e + 1;
    }
  }
}

// --- early stopping / fit ---------------------------------------------------------

TEST(EarlyStopper, PatienceRuleTrace) {
  EarlyStopper s(1);
  EXPECT_TRUE(s.observe(1, 0.5));
  EXPECT_FALSE(s.should_stop());
  EXPECT_TRUE(s.observe(2, 0.6));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.observe(3, 0.55));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 2u);
  EXPECT_EQ(s.best(), 0.6);
}

TEST(EarlyStopper, TiesDoNotReset) {
  EarlyStopper s(2);
  s.observe(0, 0.5);
  s.observe(1, 0.5);
  s.observe(2, 0.5);
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 0u);
}

TEST(Fit, ZeroEpochsReturnsInitialization) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  const auto train = synthetic(20, 1, vocab, schema, true, "t");
  const auto dev = synthetic(10, 2, vocab, schema, false, "d");
  auto cfg = small_train_config(ModelKind::kPcnn);
  cfg.max_epochs = 0;
  auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
  Rng rng(1);
  model->initialize(rng);
  const auto init = model->snapshot();
  const auto st = fit(*model, train, dev, cfg, rng);
  EXPECT_EQ(model->snapshot(), init);
  ASSERT_EQ(st.history.size(), 1u);
  EXPECT_EQ(st.best_epoch, 0u);
  EXPECT_EQ(st.best_dev_auc, pr_curve(score_corpus(*model, dev), gold_facts(dev)).auc);
}

TEST(Fit, KeepsBestDevCheckpoint) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  const auto train = synthetic(60, 3, vocab, schema, true, "t");
  const auto dev = synthetic(20, 4, vocab, schema, false, "d");
  auto cfg = small_train_config(ModelKind::kPcnn);
  cfg.max_epochs = 8;
  cfg.patience = 3;
  cfg.batch_size = 10;
  auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
  Rng rng(1);
  model->initialize(rng);
  std::ostringstream log;
  FitOptions opts;
  opts.epoch_log = &log;
  const auto st = fit(*model, train, dev, cfg, rng, opts);
  EXPECT_TRUE(st.warnings.empty());
  double running = -1;
  for (const auto& rec : st.history) {
    EXPECT_GE(st.best_dev_auc, rec.dev_auc);
    running = std::max(running, rec.dev_auc);
  }
  EXPECT_EQ(st.best_dev_auc, running);
  EXPECT_EQ(st.history[st.best_epoch].dev_auc, st.best_dev_auc);
  EXPECT_EQ(pr_curve(score_corpus(*model, dev), gold_facts(dev)).auc, st.best_dev_auc);
  std::istringstream lines(log.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "epoch,mean_loss,dev_auc");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, st.history.size());
}

TEST(Fit, ValidatesInputs) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  const auto train = synthetic(10, 1, vocab, schema, true, "t");
  auto cfg = small_train_config(ModelKind::kPcnn);
  cfg.max_epochs = 0;
  auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
  Rng rng(1);
  model->initialize(rng);
  EXPECT_THROW(fit(*model, {}, train, cfg, rng), ConfigError);
  const auto st = fit(*model, train, train, cfg, rng);
  ASSERT_EQ(st.warnings.size(), 1u);
  EXPECT_NE(st.warnings[0].find("share 10 entity pair"), std::string::npos);
}

// --- repartition ---------------------------------------------------------------

TEST(Repartition, DisjointPairsAndDeterministic) {
  Vocabulary vocab;
  RelationSchema schema = synthetic_schema();
  auto bags = synthetic(100, 8, vocab, schema);
  // Same pair under two bag ids must stay together.
  bags.push_back(bags[0]);
  bags.back().bag_id = "dup";
  Rng a(5), b(5);
  const auto [train, dev] = repartition(bags, 0.2, a);
  const auto again = repartition(bags, 0.2, b);
  EXPECT_EQ(again.first, train);
  EXPECT_EQ(again.second, dev);
  EXPECT_EQ(train.size() + dev.size(), bags.size());
  EXPECT_EQ(overlap_warnings(train, dev).size(), 0u);
  std::set<std::string> pairs;
  for (const auto& x : dev) pairs.insert(entity_pair_key(x));
  EXPECT_EQ(pairs.size(), 20u);
  EXPECT_THROW(repartition(bags, 1.0, a), ConfigError);
}

// --- synthetic corpus ---------------------------------------------------------------

TEST(Synthetic, BagsCarryTriggersOnlyWhenPositive) {
  Rng rng(12);
  SyntheticOptions opts;
  opts.num_bags = 200;
  const auto recs = synthetic_bags(opts, rng);
  const auto triggers = synthetic_trigger_words();
  std::size_t na = 0;
  for (const auto& r : recs) {
    EXPECT_NO_THROW(validate_record(r));
    std::size_t with_trigger = 0;
    for (const auto& s : r.sentences) {
      bool any = false;
      for (const auto& t : s.tokens) any |= triggers.count(t) > 0;
      with_trigger += any;
    }
    if (r.relations[0] == kNaName) {
      ++na;
      EXPECT_EQ(with_trigger, 0u);
    } else {
      EXPECT_EQ(with_trigger, 1u);
    }
  }
  EXPECT_GT(na, 20u);
  EXPECT_LT(na, 60u);
}

}  // namespace
}  // namespace dsre
