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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/corpus.hpp"
#include "dsre/encoders.hpp"
#include "dsre/hash.hpp"

namespace dsre {

// On-disk layout: 8-byte magic, u64 header length, JSON header, then every
// parameter's values as IEEE-754 doubles in parameter order (host byte
// order; little-endian on all supported targets).
inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'R', 'E', 'C', 'K', 'P', '1'};

struct Checkpoint {
  std::unique_ptr<RelationModel> model;
  RelationSchema schema;
  Vocabulary vocab;
  EncodingOptions encoding;

  // Encodes records against this checkpoint's frozen vocabulary and schema.
  std::vector<InstanceBag> encode(const std::vector<BagRecord>& records) const {
    Vocabulary v = vocab;
    RelationSchema s = schema;
    return encode_bags(records, v, s, false, encoding);
  }
};

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"model", to_string(c.kind)},       {"vocab_size", c.vocab_size},
          {"num_relations", c.num_relations}, {"word_dim", c.word_dim},
          {"position_dim", c.position_dim},   {"max_position", c.max_position},
          {"filters", c.filters},             {"window", c.window},
          {"hidden", c.hidden},               {"dropout", c.dropout}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("model").get<std::string>());
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.num_relations = j.at("num_relations").get<std::size_t>();
  c.word_dim = j.at("word_dim").get<std::size_t>();
  c.position_dim = j.at("position_dim").get<std::size_t>();
  c.max_position = j.at("max_position").get<std::size_t>();
  c.filters = j.at("filters").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

inline void save_checkpoint(std::ostream& out, RelationModel& model, const RelationSchema& schema,
                            const Vocabulary& vocab, std::size_t max_length = 120) {
  if (model.config().vocab_size != vocab.size() ||
      model.config().num_relations != schema.size()) {
    throw ConfigError("checkpoint: model dimensions disagree with vocabulary/schema");
  }
  nlohmann::json header;
  header["config"] = model_config_json(model.config());
  header["relations"] = schema.names();
  header["vocabulary"] = vocab.words();
  header["vocab_fingerprint"] = vocab.fingerprint();
  header["max_length"] = max_length;
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->shape()}});
  }
  header["parameters"] = params;
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : model.parameters()) {
    const auto v = p->value.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

inline void save_checkpoint(const std::string& path, RelationModel& model,
                            const RelationSchema& schema, const Vocabulary& vocab,
                            std::size_t max_length = 120) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path);
  save_checkpoint(out, model, schema, vocab, max_length);
  if (!out) throw ValidationError("failed writing checkpoint " + path);
}

// Reads a checkpoint. If `expected` is given, its configuration must match the
// stored one exactly.
inline Checkpoint load_checkpoint(std::istream& in, const std::string& source,
                                  const ModelConfig* expected = nullptr) {
  char magic[sizeof kCheckpointMagic];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw ParseError(source + ": not a checkpoint file");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ull << 32)) {
    throw ParseError(source + ": corrupt checkpoint header");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw ParseError(source + ": truncated checkpoint header");
  }
  Checkpoint ck;
  ModelConfig cfg;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    cfg = model_config_from_json(header.at("config"));
    ck.schema = RelationSchema(header.at("relations").get<std::vector<std::string>>());
    ck.vocab = Vocabulary(header.at("vocabulary").get<std::vector<std::string>>());
    ck.encoding = {cfg.max_position, header.value("max_length", std::size_t{120})};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": bad checkpoint header: " + e.what());
  }
  if (ck.vocab.fingerprint() != header.value("vocab_fingerprint", "")) {
    throw ParseError(source + ": vocabulary fingerprint mismatch");
  }
  if (expected && !(*expected == cfg)) {
    throw ConfigError(source + ": checkpoint configuration does not match the requested model");
  }
  ck.model = make_model(cfg);
  const auto params = ck.model->parameters();
  const auto& stored = header.at("parameters");
  if (stored.size() != params.size()) throw ConfigError(source + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (stored[i].at("name").get<std::string>() != params[i]->name ||
        stored[i].at("shape").get<Shape>() != params[i]->shape()) {
      throw ConfigError(source + ": parameter " + params[i]->name + " does not match");
    }
    auto v = params[i]->value.values();
    if (!in.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw ParseError(source + ": truncated parameter data");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(source + ": trailing bytes after parameter data");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  return load_checkpoint(in, path, expected);
}

}  // namespace dsre
