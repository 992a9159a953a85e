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
#include <cctype>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/errors.hpp"
#include "dsre/hash.hpp"
#include "dsre/tensor.hpp"

namespace dsre {

using RelationId = std::size_t;
using WordId = std::size_t;

inline constexpr RelationId kNaRelation = 0;
inline constexpr const char* kNaName = "NA";

// Ordered relation names; "NA" is always id 0.
class RelationSchema {
 public:
  RelationSchema() : names_{kNaName} { index_[kNaName] = 0; }

  explicit RelationSchema(const std::vector<std::string>& names) {
    if (names.empty() || names.front() != kNaName) {
      throw ValidationError("relation schema must start with NA");
    }
    for (const auto& n : names) {
      if (index_.count(n)) throw ValidationError("duplicate relation name: " + n);
      index_[n] = names_.size();
      names_.push_back(n);
    }
  }

  RelationId add(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    index_[name] = names_.size();
    names_.push_back(name);
    return names_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  RelationId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown relation: " + name);
    return it->second;
  }

  const std::string& name(RelationId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  friend bool operator==(const RelationSchema& a, const RelationSchema& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, RelationId> index_;
};

class Vocabulary {
 public:
  static constexpr WordId kPad = 0;
  static constexpr WordId kUnk = 1;

  Vocabulary() {
    add("<pad>");
    add("<unk>");
  }

  explicit Vocabulary(const std::vector<std::string>& words) {
    if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>") {
      throw ValidationError("vocabulary must start with <pad>, <unk>");
    }
    for (const auto& w : words) add(w);
  }

  WordId add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    index_[word] = words_.size();
    words_.push_back(word);
    return words_.size() - 1;
  }

  WordId id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  const std::string& word(WordId id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }

  std::string fingerprint() const {
    Fnv1a64 h;
    for (const auto& w : words_) {
      h.update(w);
      h.update(std::string_view("\0", 1));
    }
    return hex64(h.digest());
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> index_;
};

struct Entity {
  std::string id;
  std::string surface;
  friend bool operator==(const Entity&, const Entity&) = default;
};

// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t head() const { return end - 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct EncodingOptions {
  std::size_t max_position = 30;
  std::size_t max_length = 120;
};

// One sentence, ready for the encoders. pos1/pos2 hold clipped signed offsets;
// embedding lookup shifts them by max_position.
struct EncodedInstance {
  std::vector<std::string> raw_tokens;
  std::vector<WordId> word_ids;
  std::vector<int> pos1;
  std::vector<int> pos2;
  Span e1_span;
  Span e2_span;
  std::size_t e1_idx = 0;
  std::size_t e2_idx = 0;

  std::size_t length() const { return word_ids.size(); }
  // Pooling boundaries ordered by surface position.
  std::size_t first_entity() const { return std::min(e1_idx, e2_idx); }
  std::size_t second_entity() const { return std::max(e1_idx, e2_idx); }

  friend bool operator==(const EncodedInstance&, const EncodedInstance&) = default;
};

struct InstanceBag {
  std::string bag_id;
  Entity e1;
  Entity e2;
  std::vector<RelationId> labels;  // sorted, unique, non-empty
  std::vector<EncodedInstance> instances;

  bool has_label(RelationId r) const {
    return std::binary_search(labels.begin(), labels.end(), r);
  }

  friend bool operator==(const InstanceBag&, const InstanceBag&) = default;
};

// ---------------------------------------------------------------------------
// Text processing

inline std::string lowercase(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

inline std::vector<std::string> tokenize(const std::string& sentence) {
  std::vector<std::string> tokens;
  std::istringstream in(lowercase(sentence));
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  if (tokens.empty()) throw ValidationError("empty sentence");
  return tokens;
}

struct PositionFeatures {
  std::vector<int> pos1;
  std::vector<int> pos2;
};

inline PositionFeatures position_features(std::size_t length, std::size_t e1_idx,
                                          std::size_t e2_idx, std::size_t max_position) {
  if (e1_idx >= length || e2_idx >= length) {
    throw IndexError("position_features: entity index out of range (e1=" +
                     std::to_string(e1_idx) + ", e2=" + std::to_string(e2_idx) +
                     ", M=" + std::to_string(length) + ")");
  }
  const int cap = static_cast<int>(max_position);
  PositionFeatures f{std::vector<int>(length), std::vector<int>(length)};
  for (std::size_t j = 0; j < length; ++j) {
    const int jj = static_cast<int>(j);
    f.pos1[j] = std::clamp(jj - static_cast<int>(e1_idx), -cap, cap);
    f.pos2[j] = std::clamp(jj - static_cast<int>(e2_idx), -cap, cap);
  }
  return f;
}

// ---------------------------------------------------------------------------
// On-disk records

struct SentenceRecord {
  std::vector<std::string> tokens;
  Span e1_span;
  Span e2_span;
  friend bool operator==(const SentenceRecord&, const SentenceRecord&) = default;
};

// One line of a bag file, before vocabulary encoding.
struct BagRecord {
  std::string bag_id;
  Entity e1;
  Entity e2;
  std::vector<std::string> relations;
  std::vector<SentenceRecord> sentences;
  friend bool operator==(const BagRecord&, const BagRecord&) = default;
};

inline void validate_record(const BagRecord& bag) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("bag '" + bag.bag_id + "': " + why);
  };
  if (bag.relations.empty()) fail("no relations");
  if (bag.sentences.empty()) fail("no sentences");
  for (std::size_t i = 0; i < bag.sentences.size(); ++i) {
    const auto& s = bag.sentences[i];
    const std::string where = "sentence " + std::to_string(i) + ": ";
    if (s.tokens.empty()) fail(where + "empty token list");
    for (const Span* sp : {&s.e1_span, &s.e2_span}) {
      if (sp->start >= sp->end || sp->end > s.tokens.size()) {
        fail(where + "entity span [" + std::to_string(sp->start) + ", " +
             std::to_string(sp->end) + ") outside token range " +
             std::to_string(s.tokens.size()));
      }
    }
  }
}

inline nlohmann::json to_json(const BagRecord& bag) {
  nlohmann::json j;
  j["bag_id"] = bag.bag_id;
  j["e1"] = {{"id", bag.e1.id}, {"surface", bag.e1.surface}};
  j["e2"] = {{"id", bag.e2.id}, {"surface", bag.e2.surface}};
  j["relations"] = bag.relations;
  auto& sents = j["sentences"] = nlohmann::json::array();
  for (const auto& s : bag.sentences) {
    sents.push_back({{"tokens", s.tokens},
                     {"e1_span", {s.e1_span.start, s.e1_span.end}},
                     {"e2_span", {s.e2_span.start, s.e2_span.end}}});
  }
  return j;
}

inline Span span_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw ParseError("span must be [start, end]");
  const long long a = j[0].get<long long>(), b = j[1].get<long long>();
  if (a < 0 || b < 0) throw ParseError("span offsets must be non-negative");
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

inline BagRecord bag_from_json(const nlohmann::json& j) {
  BagRecord bag;
  bag.bag_id = j.at("bag_id").get<std::string>();
  bag.e1 = {j.at("e1").at("id").get<std::string>(),
            j.at("e1").at("surface").get<std::string>()};
  bag.e2 = {j.at("e2").at("id").get<std::string>(),
            j.at("e2").at("surface").get<std::string>()};
  bag.relations = j.at("relations").get<std::vector<std::string>>();
  for (const auto& s : j.at("sentences")) {
    bag.sentences.push_back({s.at("tokens").get<std::vector<std::string>>(),
                             span_from_json(s.at("e1_span")),
                             span_from_json(s.at("e2_span"))});
  }
  return bag;
}

// Reads a JSONL file of bag records. Blank lines are skipped.
template <class Record, class FromJson>
std::vector<Record> read_jsonl(const std::string& path, FromJson&& from_json) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<BagRecord> read_bag_records(const std::string& path) {
  auto records = read_jsonl<BagRecord>(path, bag_from_json);
  for (const auto& r : records) validate_record(r);
  return records;
}

inline void write_bag_records(std::ostream& out, const std::vector<BagRecord>& bags) {
  for (const auto& b : bags) out << to_json(b).dump() << '\n';
}

inline void write_bag_records(const std::string& path, const std::vector<BagRecord>& bags) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  write_bag_records(out, bags);
}

// ---------------------------------------------------------------------------
// Encoding

// Cuts sentences longer than opts.max_length from the right, shifting the
// window left only as far as needed to keep both entity spans.
inline SentenceRecord truncate_sentence(const SentenceRecord& s, std::size_t max_length) {
  const std::size_t len = s.tokens.size();
  if (len <= max_length) return s;
  const std::size_t lo = std::min(s.e1_span.start, s.e2_span.start);
  const std::size_t hi = std::max(s.e1_span.end, s.e2_span.end);
  const std::size_t start = std::min(lo, hi > max_length ? hi - max_length : 0);
  const std::size_t end = std::min(len, std::max(start + max_length, hi));
  SentenceRecord t;
  t.tokens.assign(s.tokens.begin() + start, s.tokens.begin() + end);
  t.e1_span = {s.e1_span.start - start, s.e1_span.end - start};
  t.e2_span = {s.e2_span.start - start, s.e2_span.end - start};
  return t;
}

// Maps tokens through the vocabulary; with grow=true unseen tokens are added,
// otherwise they become UNK.
inline EncodedInstance encode_sentence(const SentenceRecord& raw, Vocabulary& vocab,
                                       bool grow, const EncodingOptions& opts) {
  const SentenceRecord s = truncate_sentence(raw, opts.max_length);
  EncodedInstance inst;
  inst.raw_tokens = s.tokens;
  inst.word_ids.reserve(s.tokens.size());
  for (const auto& t : s.tokens) {
    inst.word_ids.push_back(grow ? vocab.add(t) : vocab.id(t));
  }
  inst.e1_span = s.e1_span;
  inst.e2_span = s.e2_span;
  inst.e1_idx = s.e1_span.head();
  inst.e2_idx = s.e2_span.head();
  auto pos = position_features(inst.length(), inst.e1_idx, inst.e2_idx, opts.max_position);
  inst.pos1 = std::move(pos.pos1);
  inst.pos2 = std::move(pos.pos2);
  return inst;
}

inline InstanceBag encode_bag(const BagRecord& rec, Vocabulary& vocab,
                              RelationSchema& schema, bool grow,
                              const EncodingOptions& opts = {}) {
  validate_record(rec);
  InstanceBag bag;
  bag.bag_id = rec.bag_id;
  bag.e1 = rec.e1;
  bag.e2 = rec.e2;
  for (const auto& r : rec.relations) {
    if (!grow && !schema.contains(r)) {
      throw ValidationError("bag '" + rec.bag_id + "': unknown relation " + r);
    }
    bag.labels.push_back(grow ? schema.add(r) : schema.id(r));
  }
  std::sort(bag.labels.begin(), bag.labels.end());
  bag.labels.erase(std::unique(bag.labels.begin(), bag.labels.end()), bag.labels.end());
  for (const auto& s : rec.sentences) {
    bag.instances.push_back(encode_sentence(s, vocab, grow, opts));
  }
  return bag;
}

inline std::vector<InstanceBag> encode_bags(const std::vector<BagRecord>& recs,
                                            Vocabulary& vocab, RelationSchema& schema,
                                            bool grow, const EncodingOptions& opts = {}) {
  std::vector<InstanceBag> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(encode_bag(r, vocab, schema, grow, opts));
  return out;
}

inline BagRecord to_record(const InstanceBag& bag, const RelationSchema& schema) {
  BagRecord rec{bag.bag_id, bag.e1, bag.e2, {}, {}};
  for (RelationId r : bag.labels) rec.relations.push_back(schema.name(r));
  for (const auto& inst : bag.instances) {
    rec.sentences.push_back({inst.raw_tokens, inst.e1_span, inst.e2_span});
  }
  return rec;
}

struct LoadOptions {
  // Add unseen words and relations; turn off for dev/test files.
  bool grow = true;
  EncodingOptions encoding;
};

inline std::vector<InstanceBag> load_bags(const std::string& path, Vocabulary& vocab,
                                          RelationSchema& schema,
                                          const LoadOptions& opts = {}) {
  std::vector<InstanceBag> bags;
  for (const auto& rec : read_bag_records(path)) {
    bags.push_back(encode_bag(rec, vocab, schema, opts.grow, opts.encoding));
  }
  return bags;
}

inline void save_bags(const std::string& path, const std::vector<InstanceBag>& bags,
                      const RelationSchema& schema) {
  std::vector<BagRecord> recs;
  recs.reserve(bags.size());
  for (const auto& b : bags) recs.push_back(to_record(b, schema));
  write_bag_records(path, recs);
}

// Finds the first occurrence of `needle` (already tokenized) in `tokens`.
inline std::optional<Span> find_tokens(const std::vector<std::string>& tokens,
                                       const std::vector<std::string>& needle,
                                       std::size_t from = 0) {
  if (needle.empty() || needle.size() > tokens.size()) return std::nullopt;
  for (std::size_t i = from; i + needle.size() <= tokens.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), tokens.begin() + i)) {
      return Span{i, i + needle.size()};
    }
  }
  return std::nullopt;
}

// Sentence-level TSV import: e1_id, e2_id, e1_surface, e2_surface, relation,
// sentence. Rows are grouped by (e1_id, e2_id) in first-seen order and their
// relations unioned.
inline std::vector<BagRecord> convert_sentence_tsv(std::istream& in,
                                                   const std::string& source = "<tsv>") {
  std::vector<BagRecord> bags;
  std::unordered_map<std::string, std::size_t> by_pair;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    const std::string where = source + ":" + std::to_string(lineno);
    if (cols.size() != 6) {
      throw ParseError(where + ": expected 6 tab-separated columns, got " +
                       std::to_string(cols.size()));
    }
    SentenceRecord sent;
    sent.tokens = tokenize(cols[5]);
    auto e1 = find_tokens(sent.tokens, tokenize(cols[2]));
    auto e2 = find_tokens(sent.tokens, tokenize(cols[3]));
    if (!e1 || !e2) throw ValidationError(where + ": entity surface not found in sentence");
    sent.e1_span = *e1;
    sent.e2_span = *e2;
    const std::string key = cols[0] + '\t' + cols[1];
    auto [it, fresh] = by_pair.try_emplace(key, bags.size());
    if (fresh) {
      bags.push_back({cols[0] + "|" + cols[1], {cols[0], cols[2]}, {cols[1], cols[3]}, {}, {}});
    }
    BagRecord& bag = bags[it->second];
    if (std::find(bag.relations.begin(), bag.relations.end(), cols[4]) == bag.relations.end()) {
      bag.relations.push_back(cols[4]);
    }
    bag.sentences.push_back(std::move(sent));
  }
  return bags;
}

// ---------------------------------------------------------------------------
// Pretrained vectors

// Overwrites rows of `word_table` ([V x d_w]) for words found in the file and
// returns the covered fraction of non-reserved vocabulary entries.
inline double load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab,
                                         Parameter& word_table) {
  const std::size_t dim = word_table.value.cols();
  std::vector<bool> covered(vocab.size(), false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> vec;
    double v;
    while (ls >> v) vec.push_back(v);
    if (vec.size() != dim) {
      throw ParseError("embedding line " + std::to_string(lineno) + ": expected " +
                       std::to_string(dim) + " values, got " + std::to_string(vec.size()));
    }
    if (!vocab.contains(word)) continue;
    const WordId id = vocab.id(word);
    if (id == Vocabulary::kPad) continue;
    std::copy(vec.begin(), vec.end(), word_table.value.row(id).begin());
    covered[id] = true;
  }
  const std::size_t real = vocab.size() - 2;
  if (real == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 2; i < covered.size(); ++i) hit += covered[i];
  return static_cast<double>(hit) / static_cast<double>(real);
}

inline double load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                                         Parameter& word_table) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return load_pretrained_embeddings(in, vocab, word_table);
}

// Order-insensitive entity-pair key used for grouping and disjointness checks.
inline std::string entity_pair_key(const std::string& a, const std::string& b) {
  return a < b ? a + '\t' + b : b + '\t' + a;
}

inline std::string entity_pair_key(const InstanceBag& bag) {
  return entity_pair_key(bag.e1.id, bag.e2.id);
}

inline std::string entity_pair_key(const BagRecord& bag) {
  return entity_pair_key(bag.e1.id, bag.e2.id);
}

}  // namespace dsre
