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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/corpus.hpp"
#include "dsre/errors.hpp"
#include "dsre/parallel.hpp"
#include "dsre/rng.hpp"

namespace dsre {

// A human-judged sentence expressing `relation` between e1 and e2.
struct SeedFact {
  Entity e1;
  Entity e2;
  std::string relation;
  SentenceRecord sentence;
  friend bool operator==(const SeedFact&, const SeedFact&) = default;
};

struct Document {
  std::string doc_id;
  std::vector<std::string> tokens;
  friend bool operator==(const Document&, const Document&) = default;
};

struct Snippet {
  std::string doc_id;
  SentenceRecord sentence;
  friend bool operator==(const Snippet&, const Snippet&) = default;
};

struct GdsOptions {
  std::size_t window = 500;       // max tokens spanned by a co-occurrence / snippet
  std::size_t max_snippets = 10;  // per bag
  std::size_t threads = 1;
};

// --- validation and IO -----------------------------------------------------------

inline void validate_seed(const SeedFact& s) {
  const std::string who = "seed (" + s.e1.id + ", " + s.e2.id + ")";
  if (s.relation.empty()) throw ValidationError(who + ": empty relation");
  BagRecord probe{who, s.e1, s.e2, {s.relation}, {s.sentence}};
  validate_record(probe);
  auto check = [&](const Entity& e, Span sp) {
    std::vector<std::string> got;
    for (std::size_t i = sp.start; i < sp.end; ++i) got.push_back(lowercase(s.sentence.tokens[i]));
    if (got != tokenize(e.surface)) {
      throw ValidationError(who + ": span does not match surface '" + e.surface + "'");
    }
  };
  check(s.e1, s.sentence.e1_span);
  check(s.e2, s.sentence.e2_span);
}

inline nlohmann::json to_json(const SeedFact& s) {
  return {{"e1", {{"id", s.e1.id}, {"surface", s.e1.surface}}},
          {"e2", {{"id", s.e2.id}, {"surface", s.e2.surface}}},
          {"relation", s.relation},
          {"tokens", s.sentence.tokens},
          {"e1_span", {s.sentence.e1_span.start, s.sentence.e1_span.end}},
          {"e2_span", {s.sentence.e2_span.start, s.sentence.e2_span.end}}};
}

inline SeedFact seed_from_json(const nlohmann::json& j) {
  SeedFact s;
  s.e1 = {j.at("e1").at("id").get<std::string>(), j.at("e1").at("surface").get<std::string>()};
  s.e2 = {j.at("e2").at("id").get<std::string>(), j.at("e2").at("surface").get<std::string>()};
  s.relation = j.at("relation").get<std::string>();
  s.sentence = {j.at("tokens").get<std::vector<std::string>>(), span_from_json(j.at("e1_span")),
                span_from_json(j.at("e2_span"))};
  return s;
}

inline nlohmann::json to_json(const Document& d) {
  return {{"doc_id", d.doc_id}, {"tokens", d.tokens}};
}

inline Document document_from_json(const nlohmann::json& j) {
  return {j.at("doc_id").get<std::string>(), j.at("tokens").get<std::vector<std::string>>()};
}

inline std::vector<SeedFact> read_seeds(const std::string& path) {
  auto seeds = read_jsonl<SeedFact>(path, [](const nlohmann::json& j) { return seed_from_json(j); });
  for (const auto& s : seeds) validate_seed(s);
  return seeds;
}

inline std::vector<Document> read_documents(const std::string& path) {
  return read_jsonl<Document>(path, [](const nlohmann::json& j) { return document_from_json(j); });
}

template <class T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto& x : items) out << to_json(x).dump() << '\n';
}

// --- index -------------------------------------------------------------------------

struct Cooccurrence {
  std::size_t doc = 0;  // index into the document list
  Span e1;
  Span e2;
  friend bool operator==(const Cooccurrence&, const Cooccurrence&) = default;
};

// (e1_id, e2_id) -> co-occurrences ordered by (doc, e1 offset).
using PairIndex = std::map<std::pair<std::string, std::string>, std::vector<Cooccurrence>>;

namespace gds_detail {

inline std::size_t gap(Span a, Span b) {
  if (a.end <= b.start) return b.start - a.end;
  if (b.end <= a.start) return a.start - b.end;
  return 0;
}

inline bool overlaps(Span a, Span b) { return a.start < b.end && b.start < a.end; }

inline std::size_t extent(Span a, Span b) {
  return std::max(a.end, b.end) - std::min(a.start, b.start);
}

}  // namespace gds_detail

// Mentions are exact matches of the lowercased surface token sequence. Each
// e1 mention is paired with its nearest non-overlapping e2 mention (earlier
// one on ties); the pair is indexed if both fit inside `window` tokens.
inline PairIndex index_corpus(const std::vector<Document>& docs,
                              const std::vector<std::pair<Entity, Entity>>& pairs,
                              std::size_t window = 500) {
  using namespace gds_detail;
  std::map<std::string, std::vector<std::string>> surfaces;  // id -> tokens
  for (const auto& [a, b] : pairs) {
    for (const Entity* e : {&a, &b}) {
      auto toks = tokenize(e->surface);
      auto [it, fresh] = surfaces.emplace(e->id, toks);
      if (!fresh && it->second != toks) {
        throw ValidationError("entity " + e->id + " has conflicting surfaces");
      }
    }
  }
  std::unordered_map<std::string, std::vector<const std::pair<const std::string,
                                                              std::vector<std::string>>*>>
      by_first;
  for (const auto& kv : surfaces) by_first[kv.second.front()].push_back(&kv);

  PairIndex index;
  for (const auto& [a, b] : pairs) index[{a.id, b.id}];
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::vector<std::string> toks(docs[d].tokens.size());
    std::transform(docs[d].tokens.begin(), docs[d].tokens.end(), toks.begin(),
                   [](const std::string& t) { return lowercase(t); });
    std::map<std::string, std::vector<Span>> mentions;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      auto it = by_first.find(toks[i]);
      if (it == by_first.end()) continue;
      for (const auto* kv : it->second) {
        const auto& s = kv->second;
        if (i + s.size() <= toks.size() && std::equal(s.begin(), s.end(), toks.begin() + i)) {
          mentions[kv->first].push_back({i, i + s.size()});
        }
      }
    }
    for (auto& [key, hits] : index) {
      auto m1 = mentions.find(key.first), m2 = mentions.find(key.second);
      if (m1 == mentions.end() || m2 == mentions.end()) continue;
      for (Span s1 : m1->second) {
        const Span* best = nullptr;
        for (const Span& s2 : m2->second) {
          if (overlaps(s1, s2)) continue;
          if (!best || gap(s1, s2) < gap(s1, *best)) best = &s2;
        }
        if (best && extent(s1, *best) <= window) hits.push_back({d, s1, *best});
      }
    }
  }
  for (auto it = index.begin(); it != index.end();) {
    it = it->second.empty() ? index.erase(it) : std::next(it);
  }
  return index;
}

// One window per co-occurrence, centered on the midpoint of the pair's span
// (rounded toward the document start) and at most `window` tokens long.
inline std::vector<Snippet> retrieve_snippets(const PairIndex& index,
                                              const std::vector<Document>& docs, const Entity& e1,
                                              const Entity& e2, std::size_t max_snippets = 10,
                                              std::size_t window = 500) {
  std::vector<Snippet> out;
  auto it = index.find({e1.id, e2.id});
  if (it == index.end()) return out;
  for (const Cooccurrence& c : it->second) {
    if (out.size() >= max_snippets) break;
    const auto& doc = docs.at(c.doc);
    const std::size_t len = doc.tokens.size();
    const std::size_t lo = std::min(c.e1.start, c.e2.start);
    const std::size_t hi = std::max(c.e1.end, c.e2.end);
    if (hi - lo > window) continue;
    std::size_t start = 0, end = len;
    if (len > window) {
      const std::size_t mid = (lo + hi) / 2;
      start = mid > window / 2 ? mid - window / 2 : 0;
      start = std::min(start, len - window);
      end = start + window;
    }
    Snippet s;
    s.doc_id = doc.doc_id;
    s.sentence.tokens.assign(doc.tokens.begin() + start, doc.tokens.begin() + end);
    s.sentence.e1_span = {c.e1.start - start, c.e1.end - start};
    s.sentence.e2_span = {c.e2.start - start, c.e2.end - start};
    out.push_back(std::move(s));
  }
  return out;
}

// Seed sentence first, then the snippets: the seed guarantees at least one
// instance expresses the label.
inline BagRecord build_bag(const SeedFact& seed, const std::vector<Snippet>& snippets) {
  BagRecord bag;
  bag.bag_id = seed.e1.id + "|" + seed.e2.id;
  bag.e1 = seed.e1;
  bag.e2 = seed.e2;
  bag.relations = {seed.relation};
  bag.sentences.push_back(seed.sentence);
  for (const auto& s : snippets) bag.sentences.push_back(s.sentence);
  return bag;
}

// Builds one bag per (e1, e2) pair. Seeds sharing a pair are merged: all seed
// sentences first (input order), then the pair's snippets, labels unioned.
inline std::vector<BagRecord> build_gds_bags(const std::vector<SeedFact>& seeds,
                                             const std::vector<Document>& docs,
                                             const GdsOptions& opts = {}) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const SeedFact*>> groups;
  std::vector<std::pair<Entity, Entity>> pairs;
  for (const auto& s : seeds) {
    validate_seed(s);
    auto key = std::make_pair(s.e1.id, s.e2.id);
    auto& g = groups[key];
    if (g.empty()) {
      order.push_back(key);
      pairs.emplace_back(s.e1, s.e2);
    }
    g.push_back(&s);
  }
  const PairIndex index = index_corpus(docs, pairs, opts.window);
  std::vector<BagRecord> out(order.size());
  parallel_for(order.size(), opts.threads, [&](std::size_t i) {
    const auto& group = groups.at(order[i]);
    const SeedFact& first = *group.front();
    BagRecord bag = build_bag(
        first, retrieve_snippets(index, docs, first.e1, first.e2, opts.max_snippets, opts.window));
    std::set<std::string> labels = {first.relation};
    for (std::size_t k = 1; k < group.size(); ++k) {
      bag.sentences.insert(bag.sentences.begin() + static_cast<std::ptrdiff_t>(k),
                           group[k]->sentence);
      labels.insert(group[k]->relation);
    }
    bag.relations.assign(labels.begin(), labels.end());
    out[i] = std::move(bag);
  });
  return out;
}

// --- split -----------------------------------------------------------------------------

enum class SplitUnit { kSentences, kPairs };

struct DatasetSplit {
  std::vector<BagRecord> train;
  std::vector<BagRecord> dev;
  std::vector<BagRecord> test;
};

// Groups bags by unordered entity pair, shuffles the groups, then hands each
// group to the split furthest below its target share (lower index on ties).
// Bags keep their input order within a split.
inline DatasetSplit split_dataset(const std::vector<BagRecord>& bags,
                                  std::array<double, 3> ratios, Rng& rng,
                                  SplitUnit unit = SplitUnit::kSentences) {
  double sum = 0;
  for (double r : ratios) {
    if (!(r >= 0)) throw ConfigError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::vector<std::string> keys;
  std::map<std::string, double> weight;
  for (const auto& b : bags) {
    const std::string k = entity_pair_key(b.e1.id, b.e2.id);
    auto [it, fresh] = weight.emplace(k, 0.0);
    if (fresh) {
      keys.push_back(k);
      if (unit == SplitUnit::kPairs) it->second = 1.0;
    }
    if (unit == SplitUnit::kSentences) it->second += static_cast<double>(b.sentences.size());
  }
  if (keys.size() < 3) {
    throw ConfigError("split needs at least 3 entity-pair groups, got " +
                      std::to_string(keys.size()));
  }
  rng.shuffle(std::span<std::string>(keys));
  double total = 0;
  for (const auto& [_, w] : weight) total += w;
  std::array<double, 3> have = {0, 0, 0};
  std::map<std::string, int> assign;
  for (const auto& k : keys) {
    int best = 0;
    double best_deficit = ratios[0] * total - have[0];
    for (int s = 1; s < 3; ++s) {
      const double deficit = ratios[s] * total - have[s];
      if (deficit > best_deficit) best = s, best_deficit = deficit;
    }
    assign[k] = best;
    have[best] += weight[k];
  }
  DatasetSplit out;
  for (const auto& b : bags) {
    switch (assign[entity_pair_key(b.e1.id, b.e2.id)]) {
      case 0: out.train.push_back(b); break;
      case 1: out.dev.push_back(b); break;
      default: out.test.push_back(b); break;
    }
  }
  return out;
}

// --- statistics -----------------------------------------------------------------------------

struct StatsRow {
  std::string relation;
  std::size_t sentences = 0;
  std::size_t pairs = 0;
  friend bool operator==(const StatsRow&, const StatsRow&) = default;
};

struct DatasetStats {
  std::vector<StatsRow> rows;  // sorted by relation name
  StatsRow total{"total", 0, 0};
  std::size_t bags = 0;
};

inline DatasetStats dataset_stats(const std::vector<BagRecord>& bags) {
  std::map<std::string, std::pair<std::size_t, std::set<std::string>>> per;
  std::set<std::string> all_pairs;
  DatasetStats st;
  st.bags = bags.size();
  for (const auto& b : bags) {
    const std::string key = entity_pair_key(b.e1.id, b.e2.id);
    all_pairs.insert(key);
    st.total.sentences += b.sentences.size();
    for (const auto& r : b.relations) {
      per[r].first += b.sentences.size();
      per[r].second.insert(key);
    }
  }
  for (const auto& [rel, v] : per) st.rows.push_back({rel, v.first, v.second.size()});
  st.total.pairs = all_pairs.size();
  return st;
}

inline void write_stats(std::ostream& out, const DatasetStats& st) {
  out << "relation\tsentences\tentity_pairs\n";
  for (const auto& r : st.rows) out << r.relation << '\t' << r.sentences << '\t' << r.pairs << '\n';
  out << "total\t" << st.total.sentences << '\t' << st.total.pairs << '\n';
}

}  // namespace dsre
