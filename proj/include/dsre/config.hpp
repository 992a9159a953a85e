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

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "dsre/encoders.hpp"
#include "dsre/errors.hpp"

namespace dsre {

// Training hyperparameters. lr, batch_size, dropout, d_w and d_p default to
// the published parameter settings; the rest are desk-scale choices.
struct TrainConfig {
  double lr = 0.1;
  std::size_t batch_size = 50;
  double dropout = 0.5;
  std::size_t d_w = 50;
  std::size_t d_p = 5;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  ModelKind model = ModelKind::kPcnn;
  std::size_t max_position = 30;
  std::size_t c = 230;
  std::size_t w = 3;
  std::size_t h = 115;
  std::size_t max_length = 120;
  // Cap the dev AUC integral at this recall (1 = full curve).
  double auc_max_recall = 1.0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
    if (!d_w || !d_p || !c || !w || !h || !max_position || !max_length) {
      throw ConfigError("dimensions must be positive");
    }
    if (w % 2 == 0) throw ConfigError("w (convolution window) must be odd");
    if (!(auc_max_recall > 0 && auc_max_recall <= 1)) {
      throw ConfigError("auc_max_recall must lie in (0, 1]");
    }
  }

  ModelConfig model_config(std::size_t vocab_size, std::size_t num_relations) const {
    ModelConfig m;
    m.kind = model;
    m.vocab_size = vocab_size;
    m.num_relations = num_relations;
    m.word_dim = d_w;
    m.position_dim = d_p;
    m.max_position = max_position;
    m.filters = c;
    m.window = w;
    m.hidden = h;
    m.dropout = dropout;
    return m;
  }

  EncodingOptions encoding() const { return {max_position, max_length}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace config_detail {

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value for " + key + ": '" + text + "'");
  }
  return v;
}

}  // namespace config_detail

// Key/value view of every TrainConfig field, in a fixed order.
inline std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  using config_detail::format_double;
  return {{"lr", format_double(c.lr)},
          {"batch_size", std::to_string(c.batch_size)},
          {"dropout", format_double(c.dropout)},
          {"d_w", std::to_string(c.d_w)},
          {"d_p", std::to_string(c.d_p)},
          {"max_epochs", std::to_string(c.max_epochs)},
          {"patience", std::to_string(c.patience)},
          {"seed", std::to_string(c.seed)},
          {"model", to_string(c.model)},
          {"max_position", std::to_string(c.max_position)},
          {"c", std::to_string(c.c)},
          {"w", std::to_string(c.w)},
          {"h", std::to_string(c.h)},
          {"max_length", std::to_string(c.max_length)},
          {"auc_max_recall", format_double(c.auc_max_recall)}};
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  using config_detail::parse_number;
  if (key == "lr") c.lr = parse_number<double>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "dropout") c.dropout = parse_number<double>(key, value);
  else if (key == "d_w") c.d_w = parse_number<std::size_t>(key, value);
  else if (key == "d_p") c.d_p = parse_number<std::size_t>(key, value);
  else if (key == "max_epochs") c.max_epochs = parse_number<std::size_t>(key, value);
  else if (key == "patience") c.patience = parse_number<std::size_t>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "model") c.model = parse_model_kind(value);
  else if (key == "max_position") c.max_position = parse_number<std::size_t>(key, value);
  else if (key == "c") c.c = parse_number<std::size_t>(key, value);
  else if (key == "w") c.w = parse_number<std::size_t>(key, value);
  else if (key == "h") c.h = parse_number<std::size_t>(key, value);
  else if (key == "max_length") c.max_length = parse_number<std::size_t>(key, value);
  else if (key == "auc_max_recall") c.auc_max_recall = parse_number<double>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Flat "key = value" text; '#' starts a comment.
inline void apply_config_text(TrainConfig& c, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(TrainConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  apply_config_text(c, in, path);
}

inline std::string config_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : to_key_values(c)) out += k + "=" + v + "\n";
  return out;
}

}  // namespace dsre
