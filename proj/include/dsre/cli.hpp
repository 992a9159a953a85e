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

// The `dsre` command-line front end. Every subcommand that writes files
// first writes a run manifest (resolved options, seed, input hashes) and
// completes it with output hashes at the end; `replay` re-runs a manifest
// and checks the outputs are byte-identical.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsre/checkpoint.hpp"
#include "dsre/config.hpp"
#include "dsre/corpus.hpp"
#include "dsre/ensemble.hpp"
#include "dsre/errors.hpp"
#include "dsre/evaluation.hpp"
#include "dsre/gds.hpp"
#include "dsre/hash.hpp"
#include "dsre/training.hpp"

namespace dsre::cli {

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string manifest_path_for(const std::string& out, bool out_is_dir) {
  return out_is_dir ? (fs::path(out) / "manifest.json").string() : out + ".manifest.json";
}

// One invocation's provenance. `args` is a fully resolved argument list: running
// it again (with the same inputs) must reproduce every output.
class Run {
 public:
  Run(std::string subcommand, bool record) : subcommand_(std::move(subcommand)), record_(record) {
    args_.push_back(subcommand_);
  }

  void arg(const std::string& flag, const std::string& value) {
    args_.push_back(flag);
    args_.push_back(value);
    config_[flag.substr(2)] = value;
  }
  void arg(const std::string& flag, const std::vector<std::string>& values) {
    args_.push_back(flag);
    for (const auto& v : values) args_.push_back(v);
    config_[flag.substr(2)] = values;
  }
  void input(const std::string& path) { inputs_.push_back(path); }
  void output(const std::string& path) { outputs_.push_back(path); }
  void note(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

  // Writes the manifest (without output hashes) before any artifact exists.
  void begin(const std::string& manifest_path, std::uint64_t seed, std::size_t threads) {
    manifest_path_ = manifest_path;
    seed_ = seed;
    threads_ = threads;
    if (record_) write(false);
  }

  void finish() {
    if (record_) write(true);
  }

  const std::vector<std::string>& outputs() const { return outputs_; }

 private:
  void write(bool complete) const {
    nlohmann::json m;
    m["subcommand"] = subcommand_;
    m["args"] = args_;
    m["config"] = config_;
    m["seed"] = seed_;
    m["threads"] = threads_;
    m["timestamp"] = utc_timestamp();
    m["status"] = complete ? "complete" : "running";
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    nlohmann::json in = nlohmann::json::array(), out = nlohmann::json::array();
    for (const auto& p : inputs_) in.push_back({{"path", p}, {"hash", file_hash(p)}});
    for (const auto& p : outputs_) {
      out.push_back({{"path", p}, {"hash", complete ? nlohmann::json(file_hash(p)) : nlohmann::json()}});
    }
    m["inputs"] = in;
    m["outputs"] = out;
    std::ofstream f(manifest_path_);
    if (!f) throw ValidationError("cannot write manifest " + manifest_path_);
    f << m.dump(2) << '\n';
  }

  std::string subcommand_;
  bool record_;
  std::vector<std::string> args_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json extra_ = nlohmann::json::object();
  std::vector<std::string> inputs_, outputs_;
  std::string manifest_path_;
  std::uint64_t seed_ = 0;
  std::size_t threads_ = 1;
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create directory " + dir + ": " + ec.message());
}

inline void ensure_parent(const std::string& file) {
  const fs::path parent = fs::path(file).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path);
  return f;
}

template <class Fn>
void write_file(const std::string& path, Fn&& fn) {
  std::ofstream f = open_out(path);
  fn(f);
  f.close();
  if (!f) throw ValidationError("failed writing " + path);
}

inline std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::istringstream in(text);
  std::string part;
  std::size_t n = 0;
  while (std::getline(in, part, ',')) {
    if (n == 3) throw UsageError("--ratios takes exactly three values");
    try {
      std::size_t used = 0;
      r[n] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError("--ratios: bad number '" + part + "'");
    }
    ++n;
  }
  if (n != 3) throw UsageError("--ratios takes exactly three values");
  return r;
}

// Resolved global options.
struct Globals {
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string config;
  bool record = true;
};

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
  std::string train, dev, out, embeddings;
  // Config fields as text, keyed by config name; only explicitly given flags apply.
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

// Config key -> flag name.
inline const std::vector<std::pair<std::string, std::string>>& train_flags() {
  static const std::vector<std::pair<std::string, std::string>> flags = {
      {"model", "--model"},           {"lr", "--lr"},
      {"batch_size", "--batch-size"}, {"dropout", "--dropout"},
      {"d_w", "--d-w"},               {"d_p", "--d-p"},
      {"max_epochs", "--max-epochs"}, {"patience", "--patience"},
      {"max_position", "--max-position"}, {"c", "--filters"},
      {"w", "--window"},              {"h", "--hidden"},
      {"max_length", "--max-length"}, {"auc_max_recall", "--auc-max-recall"}};
  return flags;
}

inline int run_train(const TrainArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  if (!g.config.empty()) apply_config_file(cfg, g.config);
  for (const auto& [key, flag] : train_flags()) {
    if (a.options.at(key)->count()) set_config_value(cfg, key, a.values.at(key));
  }
  if (g.seed_given) cfg.seed = g.seed;
  cfg.validate();

  Vocabulary vocab;
  RelationSchema schema;
  const auto train = load_bags(a.train, vocab, schema, {true, cfg.encoding()});
  const auto dev = load_bags(a.dev, vocab, schema, {false, cfg.encoding()});
  auto model = make_model(cfg.model_config(vocab.size(), schema.size()));
  Rng rng(cfg.seed);
  model->initialize(rng);
  if (!a.embeddings.empty()) {
    const double cover = load_pretrained_embeddings(a.embeddings, vocab, model->embedding().words);
    out << "pretrained vectors cover " << format_score(cover) << " of the vocabulary\n";
  }

  Run run("train", g.record);
  run.arg("--train", a.train);
  run.arg("--dev", a.dev);
  run.arg("--out", a.out);
  if (!a.embeddings.empty()) run.arg("--embeddings", a.embeddings);
  const auto kv = to_key_values(cfg);
  for (const auto& [key, flag] : train_flags()) run.arg(flag, kv.at(key));
  run.arg("--seed", std::to_string(cfg.seed));
  run.arg("--threads", std::to_string(g.threads));
  if (!g.config.empty()) run.note("config_file", g.config);
  run.input(a.train);
  run.input(a.dev);
  if (!a.embeddings.empty()) run.input(a.embeddings);

  ensure_dir(a.out);
  const fs::path dir(a.out);
  const std::string ckpt = (dir / "model.ckpt").string(), log = (dir / "epochs.csv").string(),
                    conf = (dir / "config.txt").string();
  run.output(ckpt);
  run.output(log);
  run.output(conf);
  run.begin(manifest_path_for(a.out, true), cfg.seed, g.threads);

  auto log_file = open_out(log);
  FitOptions opts;
  opts.threads = g.threads;
  opts.epoch_log = &log_file;
  const TrainState state = fit(*model, train, dev, cfg, rng, opts);
  for (const auto& w : state.warnings) err << "warning: " << w << '\n';
  save_checkpoint(ckpt, *model, schema, vocab, cfg.max_length);
  open_out(conf) << config_text(cfg);
  run.finish();
  out << to_string(cfg.model) << ": best dev auc " << format_score(state.best_dev_auc)
      << " at epoch " << state.best_epoch << " of " << state.epoch
      << (state.stopped_early ? " (early stop)" : "") << '\n';
  return 0;
}

struct PredictArgs {
  std::string model, ensemble, test, out;
  std::vector<std::string> models;
};

inline int run_predict(const PredictArgs& a, const Globals& g, std::ostream& out) {
  if (a.model.empty() == a.ensemble.empty()) {
    throw UsageError("predict: give exactly one of --model or --ensemble");
  }
  if (!a.ensemble.empty() && a.models.size() != 3) {
    throw UsageError("predict: --ensemble needs --models with three checkpoints (pcnn, ea, bgwa)");
  }
  if (a.model.empty() && a.models.empty()) throw UsageError("predict: no model given");
  const auto records = read_bag_records(a.test);
  Run run("predict", g.record);
  std::vector<PredictionRecord> preds;
  RelationSchema schema;
  if (!a.model.empty()) {
    const Checkpoint ck = load_checkpoint(a.model);
    schema = ck.schema;
    preds = score_corpus(*ck.model, ck.encode(records), g.threads);
    run.arg("--model", a.model);
    run.input(a.model);
  } else {
    const EnsembleWeights w = read_weights(a.ensemble);
    std::map<ModelKind, Checkpoint> members;
    for (const auto& path : a.models) {
      Checkpoint ck = load_checkpoint(path);
      const ModelKind kind = ck.model->kind();
      if (!members.emplace(kind, std::move(ck)).second) {
        throw ConfigError("predict: two " + to_string(kind) + " checkpoints given");
      }
    }
    const EnsembleInputs in =
        collect_probs(members.at(ModelKind::kPcnn), members.at(ModelKind::kEa),
                      members.at(ModelKind::kBgwa), records, g.threads);
    schema = members.at(ModelKind::kPcnn).schema;
    preds = score_corpus(in.bags, ensemble_predict(in, w));
    run.arg("--ensemble", a.ensemble);
    run.arg("--models", a.models);
    run.input(a.ensemble);
    for (const auto& p : a.models) run.input(p);
  }
  run.arg("--test", a.test);
  run.arg("--out", a.out);
  run.arg("--threads", std::to_string(g.threads));
  run.input(a.test);
  run.output(a.out);
  ensure_parent(a.out);
  run.begin(manifest_path_for(a.out, false), g.seed, g.threads);
  preds = rank_predictions(std::move(preds));
  write_file(a.out, [&](std::ostream& f) { write_predictions_tsv(f, preds, schema); });
  run.finish();
  out << "wrote " << preds.size() << " predictions to " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string predictions, test, out;
  double max_recall = 1.0;
};

inline int run_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  if (!(a.max_recall > 0 && a.max_recall <= 1)) {
    throw ConfigError("--auc-max-recall must lie in (0, 1]");
  }
  Vocabulary vocab;
  RelationSchema schema;
  const auto test = load_bags(a.test, vocab, schema);
  // Relations that only appear in predictions still need ids.
  std::istringstream text(read_file(a.predictions));
  std::string line;
  for (std::size_t n = 0; std::getline(text, line); ++n) {
    std::istringstream row(line);
    std::string bag, rel;
    if (n > 0 && std::getline(row, bag, '\t') && std::getline(row, rel, '\t')) schema.add(rel);
  }
  std::istringstream again(read_file(a.predictions));
  const auto preds = rank_predictions(read_predictions_tsv(again, schema, a.predictions));
  const GoldSet gold = gold_facts(test);
  const PrCurve curve = pr_curve(preds, gold, a.max_recall);

  Run run("eval", g.record);
  run.arg("--predictions", a.predictions);
  run.arg("--test", a.test);
  run.arg("--out", a.out);
  run.arg("--auc-max-recall", format_score(a.max_recall));
  run.input(a.predictions);
  run.input(a.test);
  ensure_dir(a.out);
  const std::string pr = (fs::path(a.out) / "pr.csv").string();
  const std::string report = (fs::path(a.out) / "report.txt").string();
  run.output(pr);
  run.output(report);
  run.begin(manifest_path_for(a.out, true), g.seed, g.threads);
  write_file(pr, [&](std::ostream& f) { write_pr_csv(f, curve); });
  write_file(report, [&](std::ostream& f) { write_report(f, preds, gold, curve); });
  run.finish();
  write_report(out, preds, gold, curve);
  return 0;
}

struct EnsembleFitArgs {
  std::string pcnn, ea, bgwa, dev, out;
};

inline int run_ensemble_fit(const EnsembleFitArgs& a, const Globals& g, std::ostream& out) {
  const Checkpoint pcnn = load_checkpoint(a.pcnn);
  const Checkpoint ea = load_checkpoint(a.ea);
  const Checkpoint bgwa = load_checkpoint(a.bgwa);
  const EnsembleWeights w =
      fit_weights(collect_probs(pcnn, ea, bgwa, read_bag_records(a.dev), g.threads));
  Run run("ensemble-fit", g.record);
  run.arg("--pcnn", a.pcnn);
  run.arg("--ea", a.ea);
  run.arg("--bgwa", a.bgwa);
  run.arg("--dev", a.dev);
  run.arg("--out", a.out);
  run.arg("--threads", std::to_string(g.threads));
  for (const auto& p : {a.pcnn, a.ea, a.bgwa, a.dev}) run.input(p);
  run.output(a.out);
  ensure_parent(a.out);
  run.begin(manifest_path_for(a.out, false), g.seed, g.threads);
  write_file(a.out, [&](std::ostream& f) { write_weights(f, w); });
  run.finish();
  write_weights(out, w);
  return 0;
}

struct AttnArgs {
  std::string model, bags, bag_id, relation, out;
};

inline int run_attn_export(const AttnArgs& a, const Globals& g, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.model);
  const auto bags = ck.encode(read_bag_records(a.bags));
  if (bags.empty()) throw ValidationError(a.bags + ": no bags");
  const InstanceBag* bag = &bags.front();
  if (!a.bag_id.empty()) {
    auto it = std::find_if(bags.begin(), bags.end(),
                           [&](const InstanceBag& b) { return b.bag_id == a.bag_id; });
    if (it == bags.end()) throw ValidationError("no bag with id " + a.bag_id);
    bag = &*it;
  }
  RelationId rel;
  if (!a.relation.empty()) {
    rel = ck.schema.id(a.relation);
  } else {
    // Default: the bag's first non-NA label, else its best-scoring relation.
    auto it = std::find_if(bag->labels.begin(), bag->labels.end(),
                           [](RelationId r) { return r != kNaRelation; });
    if (it != bag->labels.end()) {
      rel = *it;
    } else {
      const auto probs = predict_bag(*bag, *ck.model).probs.values();
      rel = static_cast<RelationId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
  }
  const AttentionTable table = export_attention(*ck.model, *bag, rel);

  Run run("attn-export", g.record);
  run.arg("--model", a.model);
  run.arg("--bags", a.bags);
  run.arg("--bag-id", bag->bag_id);
  run.arg("--relation", ck.schema.name(rel));
  run.arg("--out", a.out);
  run.input(a.model);
  run.input(a.bags);
  run.output(a.out);
  ensure_parent(a.out);
  run.begin(manifest_path_for(a.out, false), g.seed, g.threads);
  write_file(a.out, [&](std::ostream& f) { write_attention_csv(f, table); });
  run.finish();
  out << "attention for bag " << bag->bag_id << ", relation " << ck.schema.name(rel) << " -> "
      << a.out << '\n';
  return 0;
}

struct GdsArgs {
  std::string seeds, corpus, out, ratios = "0.6,0.1,0.3", unit = "sentences";
  std::size_t window = 500, max_snippets = 10;
};

inline int run_build_gds(const GdsArgs& a, const Globals& g, std::ostream& out) {
  const auto ratios = parse_ratios(a.ratios);
  const SplitUnit unit = a.unit == "pairs" ? SplitUnit::kPairs : SplitUnit::kSentences;
  const auto seeds = read_seeds(a.seeds);
  const auto docs = read_documents(a.corpus);
  GdsOptions opts;
  opts.window = a.window;
  opts.max_snippets = a.max_snippets;
  opts.threads = g.threads;
  const auto bags = build_gds_bags(seeds, docs, opts);
  Rng rng(g.seed);
  const DatasetSplit split = split_dataset(bags, ratios, rng, unit);

  Run run("build-gds", g.record);
  run.arg("--seeds", a.seeds);
  run.arg("--corpus", a.corpus);
  run.arg("--out", a.out);
  run.arg("--ratios", a.ratios);
  run.arg("--split-unit", a.unit);
  run.arg("--window", std::to_string(a.window));
  run.arg("--max-snippets", std::to_string(a.max_snippets));
  run.arg("--seed", std::to_string(g.seed));
  run.arg("--threads", std::to_string(g.threads));
  run.input(a.seeds);
  run.input(a.corpus);
  ensure_dir(a.out);
  const fs::path dir(a.out);
  const std::array<std::pair<const char*, const std::vector<BagRecord>*>, 3> parts = {
      {{"train", &split.train}, {"dev", &split.dev}, {"test", &split.test}}};
  for (const auto& [name, _] : parts) run.output((dir / (std::string(name) + ".jsonl")).string());
  const std::string stats = (dir / "stats.txt").string();
  run.output(stats);
  run.begin(manifest_path_for(a.out, true), g.seed, g.threads);
  for (const auto& [name, recs] : parts) {
    write_bag_records((dir / (std::string(name) + ".jsonl")).string(), *recs);
  }
  auto f = open_out(stats);
  for (const auto& [name, recs] : parts) {
    const DatasetStats st = dataset_stats(*recs);
    f << "# " << name << " (" << st.bags << " bags)\n";
    write_stats(f, st);
  }
  f.close();
  run.finish();
  out << "built " << bags.size() << " bags: train " << split.train.size() << ", dev "
      << split.dev.size() << ", test " << split.test.size() << '\n';
  return 0;
}

struct RepartitionArgs {
  std::string bags, out;
  double dev_fraction = 0.2;
};

inline int run_repartition(const RepartitionArgs& a, const Globals& g, std::ostream& out) {
  const auto records = read_bag_records(a.bags);
  Rng rng(g.seed);
  const auto [train, dev] = repartition(records, a.dev_fraction, rng);
  Run run("repartition", g.record);
  run.arg("--bags", a.bags);
  run.arg("--out", a.out);
  run.arg("--dev-fraction", format_score(a.dev_fraction));
  run.arg("--seed", std::to_string(g.seed));
  run.input(a.bags);
  ensure_dir(a.out);
  const std::string t = (fs::path(a.out) / "train.jsonl").string();
  const std::string d = (fs::path(a.out) / "dev.jsonl").string();
  run.output(t);
  run.output(d);
  run.begin(manifest_path_for(a.out, true), g.seed, g.threads);
  write_bag_records(t, train);
  write_bag_records(d, dev);
  run.finish();
  out << "train " << train.size() << " bags, dev " << dev.size() << " bags\n";
  return 0;
}

struct StatsArgs {
  std::string bags, out;
};

inline int run_stats(const StatsArgs& a, const Globals& g, std::ostream& out) {
  const DatasetStats st = dataset_stats(read_bag_records(a.bags));
  std::ostringstream text;
  text << "bags " << st.bags << '\n';
  write_stats(text, st);
  if (!a.out.empty()) {
    Run run("stats", g.record);
    run.arg("--bags", a.bags);
    run.arg("--out", a.out);
    run.input(a.bags);
    run.output(a.out);
    ensure_parent(a.out);
    run.begin(manifest_path_for(a.out, false), g.seed, g.threads);
    open_out(a.out) << text.str();
    run.finish();
  }
  out << text.str();
  return 0;
}

int run_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             bool record);

struct ReplayArgs {
  std::string manifest, out;
};

// Maps a recorded output path into a relocated --out.
inline std::string relocate(const std::string& path, const std::string& old_out,
                            const std::string& new_out) {
  if (new_out.empty() || path == old_out) return new_out.empty() ? path : new_out;
  const fs::path rel = fs::path(path).lexically_relative(old_out);
  if (rel.empty() || *rel.begin() == "..") return path;
  return (fs::path(new_out) / rel).string();
}

inline int run_replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(a.manifest));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(a.manifest + ": " + e.what());
  }
  if (m.value("status", "") != "complete") {
    throw ValidationError(a.manifest + ": run did not complete; nothing to replay");
  }
  for (const auto& in : m.at("inputs")) {
    const std::string path = in.at("path");
    if (file_hash(path) != in.at("hash").get<std::string>()) {
      throw ValidationError("input changed since the recorded run: " + path);
    }
  }
  auto args = m.at("args").get<std::vector<std::string>>();
  std::string old_out;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out") {
      old_out = args[i + 1];
      if (!a.out.empty()) args[i + 1] = a.out;
    }
  }
  std::ostringstream sub_out;
  const int code = run_args(args, sub_out, err, false);
  if (code != 0) return code;
  std::size_t same = 0;
  for (const auto& o : m.at("outputs")) {
    const std::string path = relocate(o.at("path"), old_out, a.out);
    if (file_hash(path) != o.at("hash").get<std::string>()) {
      err << "replay mismatch: " << path << '\n';
      return 1;
    }
    ++same;
  }
  out << "replay ok: " << same << " output(s) identical\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing

inline int run_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                    bool record) {
  CLI::App app{"Distantly supervised relation extraction: PCNN, BGWA and EA models, "
               "ensemble, evaluation and dataset construction.",
               "dsre"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);
  app.get_formatter()->column_width(34);

  Globals g;
  g.record = record;
  app.add_option("--threads", g.threads, "Worker threads for read-only phases")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed (train: overrides config)")
                       ->capture_default_str();
  app.add_option("--config", g.config, "key=value config file (train)")->check(CLI::ExistingFile);

  std::function<int()> action;

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one model with dev-AUC early stopping");
  train->add_option("--train", ta.train, "Training bags (JSON Lines)")->required();
  train->add_option("--dev", ta.dev, "Dev bags for model selection")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--embeddings", ta.embeddings, "Pretrained word vectors (word v1 .. vD)");
  {
    const auto defaults = to_key_values(TrainConfig{});
    for (const auto& [key, flag] : train_flags()) {
      ta.values[key] = defaults.at(key);
      std::string help = "Config key '" + key + "'";
      std::string type = "UINT";
      if (key == "model") help = "pcnn | bgwa | ea", type = "KIND";
      if (key == "lr" || key == "dropout" || key == "auc_max_recall") type = "FLOAT";
      ta.options[key] =
          train->add_option(flag, ta.values[key], help)->capture_default_str()->type_name(type);
    }
  }
  train->callback([&] { action = [&] { return run_train(ta, g, out, err); }; });

  // predict
  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Score a bag file with one model or the ensemble");
  predict->add_option("--model", pa.model, "Model checkpoint");
  predict->add_option("--ensemble", pa.ensemble, "Ensemble weights file");
  predict->add_option("--models", pa.models, "The three member checkpoints (any order)");
  predict->add_option("--test", pa.test, "Bags to score")->required();
  predict->add_option("--out", pa.out, "predictions.tsv")->required();
  predict->callback([&] { action = [&] { return run_predict(pa, g, out); }; });

  // eval
  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "PR curve, AUC and P@N of a predictions file");
  eval->add_option("--predictions", ea.predictions, "predictions.tsv")->required();
  eval->add_option("--test", ea.test, "Gold bags")->required();
  eval->add_option("--out", ea.out, "Output directory (pr.csv, report.txt)")->required();
  eval->add_option("--auc-max-recall", ea.max_recall, "Integrate AUC up to this recall")
      ->capture_default_str();
  eval->callback([&] { action = [&] { return run_eval(ea, g, out); }; });

  // ensemble-fit
  EnsembleFitArgs fa;
  auto* efit = app.add_subcommand("ensemble-fit", "Fit ensemble weights on dev bags");
  efit->add_option("--pcnn", fa.pcnn, "PCNN checkpoint")->required();
  efit->add_option("--ea", fa.ea, "EA checkpoint")->required();
  efit->add_option("--bgwa", fa.bgwa, "BGWA checkpoint")->required();
  efit->add_option("--dev", fa.dev, "Dev bags")->required();
  efit->add_option("--out", fa.out, "Weights file")->required();
  efit->callback([&] { action = [&] { return run_ensemble_fit(fa, g, out); }; });

  // attn-export
  AttnArgs aa;
  auto* attn = app.add_subcommand("attn-export", "Export word/entity attention as CSV");
  attn->add_option("--model", aa.model, "BGWA or EA checkpoint")->required();
  attn->add_option("--bags", aa.bags, "Bag file")->required();
  attn->add_option("--bag-id", aa.bag_id, "Bag to export (default: first bag)");
  attn->add_option("--relation", aa.relation,
                   "Relation (default: first non-NA label, else best-scoring)");
  attn->add_option("--out", aa.out, "attention.csv")->required();
  attn->callback([&] { action = [&] { return run_attn_export(aa, g, out); }; });

  // build-gds
  GdsArgs ga;
  auto* gds = app.add_subcommand("build-gds", "Build and split a bag dataset from seed facts");
  gds->add_option("--seeds", ga.seeds, "seeds.jsonl")->required();
  gds->add_option("--corpus", ga.corpus, "docs.jsonl")->required();
  gds->add_option("--out", ga.out, "Output directory")->required();
  gds->add_option("--ratios", ga.ratios, "train,dev,test shares")->capture_default_str();
  gds->add_option("--split-unit", ga.unit, "Balance splits by sentences or pairs")
      ->capture_default_str()
      ->check(CLI::IsMember({"sentences", "pairs"}));
  gds->add_option("--window", ga.window, "Max tokens per co-occurrence and snippet")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gds->add_option("--max-snippets", ga.max_snippets, "Retrieved snippets per seed")
      ->capture_default_str();
  gds->callback([&] { action = [&] { return run_build_gds(ga, g, out); }; });

  // repartition
  RepartitionArgs ra;
  auto* rep = app.add_subcommand("repartition", "Split a training file into train/dev by pair");
  rep->add_option("--bags", ra.bags, "Bag file")->required();
  rep->add_option("--out", ra.out, "Output directory (train.jsonl, dev.jsonl)")->required();
  rep->add_option("--dev-fraction", ra.dev_fraction, "Share of entity pairs sent to dev")
      ->capture_default_str();
  rep->callback([&] { action = [&] { return run_repartition(ra, g, out); }; });

  // stats
  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "Per-relation sentence and entity-pair counts");
  stats->add_option("--bags", sa.bags, "Bag file")->required();
  stats->add_option("--out", sa.out, "Also write the table to this file");
  stats->callback([&] { action = [&] { return run_stats(sa, g, out); }; });

  // replay
  ReplayArgs pl;
  auto* replay = app.add_subcommand("replay", "Re-run a manifest and verify identical outputs");
  replay->add_option("--manifest", pl.manifest, "manifest.json of a completed run")->required();
  replay->add_option("--out", pl.out, "Write outputs here instead of the recorded --out");
  replay->callback([&] { action = [&] { return run_replay(pl, out, err); }; });

  const std::string globals =
      "\nGlobal options (before or after the subcommand):\n"
      "  --threads UINT [1]   worker threads for read-only phases\n"
      "  --seed UINT [1]      random seed; all randomness derives from it\n"
      "  --config FILE        key=value training config (defaults < file < flags)";
  for (CLI::App* sub : app.get_subcommands({})) sub->footer(globals);

  try {
    if (!args.empty() && !args[0].empty() && args[0][0] != '-' &&
        app.get_subcommands([&](CLI::App* s) { return s->get_name() == args[0]; }).empty()) {
      err << "unknown subcommand '" << args[0] << "'\n" << app.help();
      return 2;
    }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    g.seed_given = seed_opt->count() > 0;
    return action();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_args(args, out, err, true);
}

}  // namespace dsre::cli
