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
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsre/corpus.hpp"
#include "dsre/encoders.hpp"
#include "dsre/inference.hpp"

namespace dsre {

struct PredictionRecord {
  std::string bag_id;
  RelationId relation = 0;
  double score = 0.0;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

using GoldSet = std::set<std::pair<std::string, RelationId>>;

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

struct PrCurve {
  std::vector<PrPoint> points;
  double auc = 0.0;
};

// Non-NA (bag_id, relation) facts of a corpus.
inline GoldSet gold_facts(const std::vector<InstanceBag>& bags) {
  GoldSet gold;
  for (const auto& b : bags) {
    for (RelationId r : b.labels) {
      if (r != kNaRelation) gold.emplace(b.bag_id, r);
    }
  }
  return gold;
}

// One record per (bag, non-NA relation), in bag order then relation order.
inline std::vector<PredictionRecord> score_corpus(const std::vector<InstanceBag>& bags,
                                                  const ScoreMatrix& scores) {
  if (scores.rows != bags.size()) throw DimensionError("score_corpus: row count != bag count");
  std::vector<PredictionRecord> out;
  out.reserve(bags.size() * (scores.cols > 0 ? scores.cols - 1 : 0));
  for (std::size_t i = 0; i < bags.size(); ++i) {
    for (RelationId r = 1; r < scores.cols; ++r) out.push_back({bags[i].bag_id, r, scores(i, r)});
  }
  return out;
}

inline std::vector<PredictionRecord> score_corpus(const RelationModel& model,
                                                  const std::vector<InstanceBag>& bags,
                                                  std::size_t threads = 1) {
  return score_corpus(bags, score_matrix(model, bags, threads));
}

// Score descending; ties by bag_id, then relation id.
inline std::vector<PredictionRecord> rank_predictions(std::vector<PredictionRecord> preds) {
  std::sort(preds.begin(), preds.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.bag_id != b.bag_id) return a.bag_id < b.bag_id;
    return a.relation < b.relation;
  });
  return preds;
}

// Rank-trapezoid area under the (recall, precision) points, starting from
// (0, p_1). With max_recall < 1 the integral stops at that recall,
// interpolating linearly inside the crossing segment.
inline double pr_auc(const std::vector<PrPoint>& points, double max_recall = 1.0) {
  if (points.empty()) return 0.0;
  double area = 0.0;
  PrPoint prev{0.0, points.front().precision};
  for (const PrPoint& p : points) {
    if (p.recall > max_recall) {
      const double t = (max_recall - prev.recall) / (p.recall - prev.recall);
      const double pc = prev.precision + t * (p.precision - prev.precision);
      area += (max_recall - prev.recall) * (prev.precision + pc) / 2.0;
      return area;
    }
    area += (p.recall - prev.recall) * (prev.precision + p.precision) / 2.0;
    prev = p;
  }
  return area;
}

inline PrCurve pr_curve(const std::vector<PredictionRecord>& preds, const GoldSet& gold,
                        double auc_max_recall = 1.0) {
  if (gold.empty()) throw DomainError("pr_curve: gold set is empty");
  const auto ranked = rank_predictions(preds);
  PrCurve curve;
  curve.points.reserve(ranked.size());
  std::size_t hits = 0;
  const double total = static_cast<double>(gold.size());
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (gold.count({ranked[k].bag_id, ranked[k].relation})) ++hits;
    curve.points.push_back({static_cast<double>(hits) / total,
                            static_cast<double>(hits) / static_cast<double>(k + 1)});
  }
  curve.auc = pr_auc(curve.points, auc_max_recall);
  return curve;
}

struct PrecisionAtN {
  double precision = 0.0;
  std::size_t used = 0;
  bool truncated = false;  // n exceeded the number of predictions
};

inline PrecisionAtN p_at_n(const std::vector<PredictionRecord>& preds, const GoldSet& gold,
                           std::size_t n) {
  if (n == 0) throw DomainError("p_at_n: n must be >= 1");
  PrecisionAtN out;
  out.truncated = n > preds.size();
  out.used = std::min(n, preds.size());
  if (out.used == 0) return out;
  const auto ranked = rank_predictions(preds);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < out.used; ++k) {
    if (gold.count({ranked[k].bag_id, ranked[k].relation})) ++hits;
  }
  out.precision = static_cast<double>(hits) / static_cast<double>(out.used);
  return out;
}

// ---------------------------------------------------------------------------
// Attention export

struct AttentionTable {
  std::vector<std::string> tokens;
  std::vector<std::pair<std::string, std::vector<double>>> columns;
};

// Attention of the bag's argmax instance for `relation`.
inline AttentionTable export_attention(const RelationModel& model, const InstanceBag& bag,
                                       RelationId relation) {
  if (model.kind() == ModelKind::kPcnn) {
    throw ConfigError("attention export is unsupported for pcnn (no attention mechanism)");
  }
  if (relation >= model.config().num_relations) throw IndexError("relation outside schema");
  const auto& inst = bag.instances.at(select_instance(bag, relation, model));
  const ModelOutput out = model.predict(inst);
  AttentionTable table;
  table.tokens = inst.raw_tokens;
  for (const char* name : {"word", "entity1", "entity2"}) {
    auto it = out.attention.find(name);
    if (it != out.attention.end()) table.columns.emplace_back(name, it->second);
  }
  return table;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_score(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_attention_csv(std::ostream& out, const AttentionTable& t) {
  out << "token";
  for (const auto& [name, _] : t.columns) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    out << csv_field(t.tokens[i]);
    for (const auto& [_, values] : t.columns) out << ',' << format_score(values.at(i));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Report files

inline void write_predictions_tsv(std::ostream& out, const std::vector<PredictionRecord>& preds,
                                  const RelationSchema& schema) {
  out << "bag_id\trelation\tscore\n";
  for (const auto& p : preds) {
    out << p.bag_id << '\t' << schema.name(p.relation) << '\t' << format_score(p.score) << '\n';
  }
}

inline std::vector<PredictionRecord> read_predictions_tsv(std::istream& in,
                                                          const RelationSchema& schema,
                                                          const std::string& source) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (++lineno == 1 || line.empty()) continue;
    std::istringstream row(line);
    std::string bag, rel, score;
    if (!std::getline(row, bag, '\t') || !std::getline(row, rel, '\t') ||
        !std::getline(row, score)) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 3 columns");
    }
    try {
      out.push_back({bag, schema.id(rel), std::stod(score)});
    } catch (const std::invalid_argument&) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": bad score");
    }
  }
  return out;
}

inline void write_pr_csv(std::ostream& out, const PrCurve& curve) {
  out << "recall,precision\n";
  for (const auto& p : curve.points) {
    out << format_score(p.recall) << ',' << format_score(p.precision) << '\n';
  }
}

inline void write_report(std::ostream& out, const std::vector<PredictionRecord>& preds,
                         const GoldSet& gold, const PrCurve& curve) {
  out << "predictions " << preds.size() << "\n";
  out << "gold_facts " << gold.size() << "\n";
  out << "auc " << format_score(curve.auc) << "\n";
  for (std::size_t n : {100, 200, 300}) {
    const auto p = p_at_n(preds, gold, n);
    out << "p@" << n << ' ' << format_score(p.precision);
    if (p.truncated) out << " (only " << p.used << " predictions)";
    out << '\n';
  }
}

}  // namespace dsre
