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

#include <cstddef>
#include <optional>
#include <vector>

#include "dsre/corpus.hpp"
#include "dsre/encoders.hpp"
#include "dsre/parallel.hpp"

namespace dsre {

// Index of the instance with the highest eval-mode probability for `label`;
// the first index wins ties.
inline std::size_t select_instance(const InstanceBag& bag, RelationId label,
                                   const RelationModel& model) {
  if (bag.instances.empty()) throw ContractError("select_instance: empty bag " + bag.bag_id);
  std::size_t best = 0;
  double best_p = -1.0;
  for (std::size_t i = 0; i < bag.instances.size(); ++i) {
    const double p = model.predict(bag.instances[i]).probs[label];
    if (p > best_p) {
      best_p = p;
      best = i;
    }
  }
  return best;
}

// Bag score vector: probs[r] is the max over instances of the instance
// probability of r. This is a score vector, not a distribution. When
// attention_for is set, the attention maps of that relation's argmax
// instance are attached.
inline ModelOutput predict_bag(const InstanceBag& bag, const RelationModel& model,
                               std::optional<RelationId> attention_for = std::nullopt) {
  if (bag.instances.empty()) throw ContractError("predict_bag: empty bag " + bag.bag_id);
  const std::size_t rl = model.config().num_relations;
  ModelOutput out;
  out.probs = Tensor({rl}, -1.0);
  out.logits.assign(rl, 0.0);
  std::vector<std::size_t> best(rl, 0);
  std::vector<ModelOutput> per_instance;
  per_instance.reserve(bag.instances.size());
  for (std::size_t i = 0; i < bag.instances.size(); ++i) {
    per_instance.push_back(model.predict(bag.instances[i]));
    const auto& o = per_instance.back();
    for (std::size_t r = 0; r < rl; ++r) {
      if (o.probs[r] > out.probs[r]) {
        out.probs[r] = o.probs[r];
        out.logits[r] = o.logits[r];
        best[r] = i;
      }
    }
  }
  if (attention_for) {
    if (*attention_for >= rl) throw IndexError("predict_bag: relation outside schema");
    out.attention = per_instance[best[*attention_for]].attention;
  }
  return out;
}

// Row-major [n_bags x rl] score table; may have zero rows.
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool same_shape(const ScoreMatrix& o) const { return rows == o.rows && cols == o.cols; }
  friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;
};

// Bag scores for every bag, computed across `threads` workers.
inline ScoreMatrix score_matrix(const RelationModel& model, const std::vector<InstanceBag>& bags,
                                std::size_t threads = 1) {
  const std::size_t rl = model.config().num_relations;
  ScoreMatrix out(bags.size(), rl);
  parallel_for(bags.size(), threads, [&](std::size_t i) {
    const ModelOutput o = predict_bag(bags[i], model);
    for (std::size_t r = 0; r < rl; ++r) out(i, r) = o.probs[r];
  });
  return out;
}

}  // namespace dsre
