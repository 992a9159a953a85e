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

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dsre/config.hpp"
#include "dsre/corpus.hpp"
#include "dsre/encoders.hpp"
#include "dsre/evaluation.hpp"
#include "dsre/inference.hpp"
#include "dsre/parallel.hpp"
#include "dsre/rng.hpp"

namespace dsre {

// Selects the bag's most probable instance for `label` (eval mode), then runs
// a train-mode forward/backward on it. Gradients accumulate into the model.
inline double train_example(const InstanceBag& bag, RelationId label, RelationModel& model,
                            Rng& rng) {
  const std::size_t i = select_instance(bag, label, model);
  return model.nll(bag.instances[i], label, model.train_options(&rng), true);
}

struct TrainingExample {
  std::size_t bag = 0;
  RelationId label = 0;
};

// One example per (bag, label): a bag with k labels contributes k examples.
inline std::vector<TrainingExample> expand_examples(const std::vector<InstanceBag>& bags) {
  std::vector<TrainingExample> out;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (RelationId r : bags[b].labels) out.push_back({b, r});
  }
  return out;
}

// Shuffles the examples with `rng`, then per batch: accumulate gradients over
// the batch and take one SGD step on their mean. Returns the mean loss.
// Instance selection within a batch runs on `threads` workers against the
// batch-start parameters; dropout draws stay sequential, so results do not
// depend on the thread count.
inline double train_epoch(const std::vector<InstanceBag>& bags, RelationModel& model,
                          const TrainConfig& cfg, Rng& rng, std::size_t threads = 1) {
  auto examples = expand_examples(bags);
  if (examples.empty()) return 0.0;
  rng.shuffle(std::span<TrainingExample>(examples));
  const auto params = model.parameters();
  double total = 0.0;
  std::vector<std::size_t> chosen;
  for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(examples.size(), start + cfg.batch_size);
    chosen.assign(end - start, 0);
    parallel_for(end - start, threads, [&](std::size_t k) {
      const auto& ex = examples[start + k];
      chosen[k] = select_instance(bags[ex.bag], ex.label, model);
    });
    zero_grads(params);
    for (std::size_t k = start; k < end; ++k) {
      const auto& ex = examples[k];
      total += model.nll(bags[ex.bag].instances[chosen[k - start]], ex.label,
                         model.train_options(&rng), true);
    }
    sgd_step(params, cfg.lr / static_cast<double>(end - start));
  }
  zero_grads(params);
  return total / static_cast<double>(examples.size());
}

// Patience rule over a stream of dev scores. Only strict improvements reset
// the counter; the earliest best epoch is kept.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Returns true if this observation improved on the best so far.
  bool observe(std::size_t epoch, double score) {
    if (!seen_ || score > best_) {
      seen_ = true;
      best_ = score;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return seen_ && stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  bool seen_ = false;
  double best_ = 0.0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double dev_auc = 0.0;
};

struct TrainState {
  std::size_t epoch = 0;  // last completed epoch
  double best_dev_auc = 0.0;
  std::size_t best_epoch = 0;
  std::vector<Tensor> best_params;
  std::vector<EpochRecord> history;  // epoch 0 = initialization
  std::vector<std::string> warnings;
  bool stopped_early = false;
};

struct FitOptions {
  std::size_t threads = 1;
  std::ostream* epoch_log = nullptr;  // CSV epoch,mean_loss,dev_auc
  std::function<void(const EpochRecord&)> on_epoch;
};

inline std::vector<std::string> overlap_warnings(const std::vector<InstanceBag>& train,
                                                 const std::vector<InstanceBag>& dev) {
  std::set<std::string> pairs;
  for (const auto& b : train) pairs.insert(entity_pair_key(b));
  std::size_t shared = 0;
  for (const auto& b : dev) shared += pairs.count(entity_pair_key(b));
  if (shared == 0) return {};
  return {"train and dev share " + std::to_string(shared) + " entity pair(s)"};
}

inline double dev_auc(const RelationModel& model, const std::vector<InstanceBag>& dev,
                      const GoldSet& gold, double max_recall, std::size_t threads) {
  return pr_curve(score_corpus(model, dev, threads), gold, max_recall).auc;
}

// Trains `model` (already initialized) and leaves it holding the parameters
// with the best dev AUC. Epoch 0 is the untrained model.
inline TrainState fit(RelationModel& model, const std::vector<InstanceBag>& train,
                      const std::vector<InstanceBag>& dev, const TrainConfig& cfg, Rng& rng,
                      const FitOptions& opts = {}) {
  cfg.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  const GoldSet gold = gold_facts(dev);
  if (gold.empty()) throw ConfigError("dev set has no non-NA facts; dev AUC is undefined");

  TrainState state;
  state.warnings = overlap_warnings(train, dev);
  EarlyStopper stopper(cfg.patience);
  if (opts.epoch_log) *opts.epoch_log << "epoch,mean_loss,dev_auc\n";

  auto record = [&](std::size_t epoch, double loss) {
    const EpochRecord rec{epoch, loss,
                          dev_auc(model, dev, gold, cfg.auc_max_recall, opts.threads)};
    state.history.push_back(rec);
    state.epoch = epoch;
    if (stopper.observe(epoch, rec.dev_auc)) {
      state.best_params = model.snapshot();
      state.best_dev_auc = rec.dev_auc;
      state.best_epoch = epoch;
    }
    if (opts.epoch_log) {
      *opts.epoch_log << epoch << ',' << format_score(loss) << ',' << format_score(rec.dev_auc)
                      << '\n';
      opts.epoch_log->flush();
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  };

  record(0, 0.0);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    record(epoch, train_epoch(train, model, cfg, rng, opts.threads));
    if (stopper.should_stop()) {
      state.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  model.restore(state.best_params);
  return state;
}

// Fraction of bags whose top-scoring relation is one of their labels.
inline double bag_accuracy(const RelationModel& model, const std::vector<InstanceBag>& bags,
                           std::size_t threads = 1) {
  if (bags.empty()) return 0.0;
  const ScoreMatrix s = score_matrix(model, bags, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < s.cols; ++r) {
      if (s(i, r) > s(i, arg)) arg = r;
    }
    correct += bags[i].has_label(arg);
  }
  return static_cast<double>(correct) / static_cast<double>(bags.size());
}

// Splits a corpus into train/dev by entity pair: shuffled pair groups, the
// first round(dev_fraction * groups) go to dev. Bag order is preserved.
// Works on encoded bags and raw records alike.
template <class Bag>
std::pair<std::vector<Bag>, std::vector<Bag>> repartition(const std::vector<Bag>& bags,
                                                          double dev_fraction, Rng& rng) {
  if (!(dev_fraction > 0 && dev_fraction < 1)) {
    throw ConfigError("dev fraction must lie in (0, 1)");
  }
  std::vector<std::string> keys;
  std::map<std::string, std::size_t> seen;
  for (const auto& b : bags) {
    if (seen.emplace(entity_pair_key(b), keys.size()).second) keys.push_back(entity_pair_key(b));
  }
  if (keys.size() < 2) throw ConfigError("repartition needs at least two entity pairs");
  rng.shuffle(std::span<std::string>(keys));
  auto n_dev = static_cast<std::size_t>(std::llround(dev_fraction * keys.size()));
  n_dev = std::clamp<std::size_t>(n_dev, 1, keys.size() - 1);
  const std::set<std::string> dev_keys(keys.begin(), keys.begin() + n_dev);
  std::pair<std::vector<Bag>, std::vector<Bag>> out;
  for (const auto& b : bags) {
    (dev_keys.count(entity_pair_key(b)) ? out.second : out.first).push_back(b);
  }
  return out;
}

}  // namespace dsre
