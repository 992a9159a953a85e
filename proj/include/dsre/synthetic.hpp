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
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsre/corpus.hpp"
#include "dsre/errors.hpp"
#include "dsre/gds.hpp"
#include "dsre/rng.hpp"

namespace dsre {

// Small generated corpora for smoke tests and desk-scale experiments. A
// positive bag has at least one sentence with its relation's trigger phrase
// between the two entities; the rest are filler-only distractors that mention
// the same pair. NA bags contain distractors only.
struct SyntheticOptions {
  std::size_t num_bags = 100;
  std::size_t min_sentences = 1;
  std::size_t max_sentences = 3;
  std::size_t min_fillers = 2;  // filler tokens outside the entity pair
  std::size_t max_fillers = 8;
  double na_fraction = 0.2;
  std::string id_prefix = "b";
  // Head and tail surfaces are drawn from pools of this many names each, so
  // names recur across bags while every bag still gets a distinct pair.
  // 0 gives every bag its own fresh names.
  std::size_t entity_pool = 40;
};

struct TriggerRelation {
  std::string name;
  std::vector<std::string> phrase;
};

inline const std::vector<TriggerRelation>& synthetic_relations() {
  static const std::vector<TriggerRelation> rels = {
      {"place_of_birth", {"was", "born", "in"}},
      {"place_of_death", {"died", "in"}},
      {"educated_at", {"graduated", "from"}},
      {"employer", {"works", "for"}},
  };
  return rels;
}

inline const std::vector<std::string>& synthetic_fillers() {
  static const std::vector<std::string> words = {
      "the",    "a",      "of",     "and",     "report", "said",   "city",   "year",
      "team",   "local",  "new",    "with",    "after",  "during", "people", "also",
      "when",   "visit",  "news",   "many",    "north",  "market", "film",   "music",
      "school", "game",   "season", "old",     "later",  "early",  "home",   "family",
      "story",  "group",  "public", "meeting", "summer", "winter", "friend", "weekend"};
  return words;
}

inline std::set<std::string> synthetic_trigger_words() {
  std::set<std::string> out;
  for (const auto& r : synthetic_relations()) out.insert(r.phrase.begin(), r.phrase.end());
  return out;
}

inline RelationSchema synthetic_schema() {
  RelationSchema s;
  for (const auto& r : synthetic_relations()) s.add(r.name);
  return s;
}

namespace synthetic_detail {

inline void push_fillers(std::vector<std::string>& out, std::size_t n, Rng& rng) {
  const auto& f = synthetic_fillers();
  for (std::size_t i = 0; i < n; ++i) out.push_back(f[rng.below(f.size())]);
}

inline std::size_t between(std::size_t lo, std::size_t hi, Rng& rng) {
  return lo + rng.below(hi - lo + 1);
}

// fillers, e1, [trigger | fillers], e2, fillers
inline SentenceRecord sentence(const Entity& e1, const Entity& e2,
                               const std::vector<std::string>* trigger,
                               const SyntheticOptions& opts, Rng& rng) {
  const std::size_t budget = between(opts.min_fillers, opts.max_fillers, rng);
  const std::size_t left = rng.below(budget + 1);
  const std::size_t mid = trigger ? 0 : 1 + rng.below(3);
  SentenceRecord s;
  push_fillers(s.tokens, left, rng);
  s.e1_span = {s.tokens.size(), s.tokens.size() + 1};
  s.tokens.push_back(e1.surface);
  if (trigger) {
    s.tokens.insert(s.tokens.end(), trigger->begin(), trigger->end());
  } else {
    push_fillers(s.tokens, mid, rng);
  }
  s.e2_span = {s.tokens.size(), s.tokens.size() + 1};
  s.tokens.push_back(e2.surface);
  push_fillers(s.tokens, budget - left, rng);
  return s;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace synthetic_detail

inline std::vector<BagRecord> synthetic_bags(const SyntheticOptions& opts, Rng& rng) {
  using namespace synthetic_detail;
  const auto& rels = synthetic_relations();
  if (opts.entity_pool > 0 && opts.num_bags > opts.entity_pool * opts.entity_pool) {
    throw ConfigError("synthetic: entity pool too small for the requested bag count");
  }
  std::vector<BagRecord> out;
  out.reserve(opts.num_bags);
  std::set<std::pair<std::size_t, std::size_t>> used;
  for (std::size_t b = 0; b < opts.num_bags; ++b) {
    BagRecord bag;
    const std::string id = opts.id_prefix + std::to_string(b);
    bag.bag_id = id;
    if (opts.entity_pool == 0) {
      bag.e1 = {id + ".h", "head_" + id};
      bag.e2 = {id + ".t", "tail_" + id};
    } else {
      std::pair<std::size_t, std::size_t> pair;
      do {
        pair = {rng.below(opts.entity_pool), rng.below(opts.entity_pool)};
      } while (!used.insert(pair).second);
      bag.e1 = {"h" + std::to_string(pair.first), "head" + std::to_string(pair.first)};
      bag.e2 = {"t" + std::to_string(pair.second), "tail" + std::to_string(pair.second)};
    }
    const bool na = rng.uniform() < opts.na_fraction;
    const std::size_t rel = na ? 0 : rng.below(rels.size());
    bag.relations = {na ? std::string(kNaName) : rels[rel].name};
    const std::size_t n = between(opts.min_sentences, opts.max_sentences, rng);
    const std::size_t positive = na ? n : rng.below(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto* trig = (i == positive) ? &rels[rel].phrase : nullptr;
      bag.sentences.push_back(sentence(bag.e1, bag.e2, trig, opts, rng));
    }
    out.push_back(std::move(bag));
  }
  return out;
}

struct SyntheticGds {
  std::vector<SeedFact> seeds;
  std::vector<Document> documents;
};

// Seed facts with one trigger sentence each plus a document collection that
// mentions the seed pairs at assorted distances (some beyond the 500-token
// window) inside documents of 60-1400 tokens. About 5% of seeds repeat the
// previous seed's pair with another sentence.
inline SyntheticGds synthetic_gds(std::size_t num_seeds, Rng& rng,
                                  std::size_t docs_per_seed = 2) {
  using namespace synthetic_detail;
  const auto& rels = synthetic_relations();
  SyntheticOptions sopts;
  SyntheticGds out;
  for (std::size_t i = 0; i < num_seeds; ++i) {
    SeedFact seed;
    if (i > 0 && rng.uniform() < 0.05) {
      seed.e1 = out.seeds.back().e1;
      seed.e2 = out.seeds.back().e2;
    } else {
      seed.e1 = {"P" + std::to_string(i), "Person" + std::to_string(i)};
      seed.e2 = {"L" + std::to_string(i), "Town " + std::to_string(i)};
    }
    const auto& rel = rels[rng.below(rels.size())];
    seed.relation = rel.name;
    Entity a{seed.e1.id, "\x01"}, b{seed.e2.id, "\x02"};
    seed.sentence = sentence(a, b, &rel.phrase, sopts, rng);
    // Re-insert the real (possibly multi-token) surfaces.
    auto& s = seed.sentence;
    std::vector<std::string> toks;
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      const Entity* e = t == s.e1_span.start ? &seed.e1 : t == s.e2_span.start ? &seed.e2 : nullptr;
      if (!e) {
        toks.push_back(s.tokens[t]);
        continue;
      }
      Span& sp = (e == &seed.e1) ? s.e1_span : s.e2_span;
      sp.start = toks.size();
      for (const auto& w : split_words(e->surface)) toks.push_back(w);
      sp.end = toks.size();
    }
    s.tokens = std::move(toks);
    out.seeds.push_back(std::move(seed));
  }
  const std::size_t num_docs = num_seeds * docs_per_seed;
  for (std::size_t d = 0; d < num_docs; ++d) {
    Document doc;
    doc.doc_id = "doc" + std::to_string(d);
    push_fillers(doc.tokens, 60 + rng.below(1341), rng);
    for (std::size_t k = 1 + rng.below(3); k-- > 0;) {
      const SeedFact& s = out.seeds[rng.below(out.seeds.size())];
      const auto w1 = split_words(s.e1.surface), w2 = split_words(s.e2.surface);
      const std::size_t dist = 1 + rng.below(650);
      const std::size_t pos = rng.below(doc.tokens.size());
      const bool e1_first = rng.bernoulli(0.7);
      const auto& first = e1_first ? w1 : w2;
      const auto& second = e1_first ? w2 : w1;
      doc.tokens.insert(doc.tokens.begin() + static_cast<std::ptrdiff_t>(pos), first.begin(),
                        first.end());
      const std::size_t pos2 = std::min(doc.tokens.size(), pos + first.size() + dist);
      doc.tokens.insert(doc.tokens.begin() + static_cast<std::ptrdiff_t>(pos2), second.begin(),
                        second.end());
    }
    out.documents.push_back(std::move(doc));
  }
  return out;
}

}  // namespace dsre
