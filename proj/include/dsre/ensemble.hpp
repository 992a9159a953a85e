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

#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsre/checkpoint.hpp"
#include "dsre/corpus.hpp"
#include "dsre/evaluation.hpp"
#include "dsre/inference.hpp"

namespace dsre {

// Coefficients of PCNN, EA and BGWA, in that order.
struct EnsembleWeights {
  double alpha = 1.0;
  double beta = 0.0;
  double gamma = 0.0;
  friend bool operator==(const EnsembleWeights&, const EnsembleWeights&) = default;
};

struct EnsembleInputs {
  ScoreMatrix pcnn;
  ScoreMatrix ea;
  ScoreMatrix bgwa;
  ScoreMatrix targets;  // multi-hot bag labels
  std::vector<InstanceBag> bags;
};

inline ScoreMatrix label_matrix(const std::vector<InstanceBag>& bags, std::size_t rl) {
  ScoreMatrix y(bags.size(), rl);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    for (RelationId r : bags[i].labels) {
      if (r >= rl) throw IndexError("bag " + bags[i].bag_id + ": label outside schema");
      y(i, r) = 1.0;
    }
  }
  return y;
}

// Scores every record with each checkpoint (each with its own vocabulary).
inline EnsembleInputs collect_probs(const Checkpoint& pcnn, const Checkpoint& ea,
                                    const Checkpoint& bgwa, const std::vector<BagRecord>& records,
                                    std::size_t threads = 1) {
  if (!(pcnn.schema == ea.schema) || !(pcnn.schema == bgwa.schema)) {
    throw ConfigError("ensemble members were trained on different relation schemas");
  }
  const std::array<std::pair<const Checkpoint*, ModelKind>, 3> members = {
      {{&pcnn, ModelKind::kPcnn}, {&ea, ModelKind::kEa}, {&bgwa, ModelKind::kBgwa}}};
  for (const auto& [ck, kind] : members) {
    if (ck->model->kind() != kind) {
      throw ConfigError("expected a " + to_string(kind) + " checkpoint, got " +
                        to_string(ck->model->kind()));
    }
  }
  EnsembleInputs in;
  in.bags = pcnn.encode(records);
  in.pcnn = score_matrix(*pcnn.model, in.bags, threads);
  in.ea = score_matrix(*ea.model, ea.encode(records), threads);
  in.bgwa = score_matrix(*bgwa.model, bgwa.encode(records), threads);
  in.targets = label_matrix(in.bags, pcnn.schema.size());
  return in;
}

// Least squares over the flattened matrices via the normal equations. A
// singular system is resolved with the minimum-norm solution (eigenvalue
// pseudo-inverse of the 3x3 Gram matrix).
inline EnsembleWeights fit_weights(const ScoreMatrix& p_pcnn, const ScoreMatrix& p_ea,
                                   const ScoreMatrix& p_bgwa, const ScoreMatrix& targets) {
  if (!p_pcnn.same_shape(p_ea) || !p_pcnn.same_shape(p_bgwa) || !p_pcnn.same_shape(targets)) {
    throw DimensionError("fit_weights: score and target matrices differ in shape");
  }
  const std::size_t n = p_pcnn.data.size();
  if (n < 3) throw DomainError("fit_weights: need at least 3 observations, got " + std::to_string(n));
  Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d x(p_pcnn.data[k], p_ea.data[k], p_bgwa.data[k]);
    gram.noalias() += x * x.transpose();
    rhs += x * targets.data[k];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(gram);
  const Eigen::Vector3d lambda = eig.eigenvalues();
  const double tol = std::max(lambda.cwiseAbs().maxCoeff(), 1e-300) * 1e-12;
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    if (lambda(i) > tol) {
      const Eigen::Vector3d v = eig.eigenvectors().col(i);
      w += v * (v.dot(rhs) / lambda(i));
    }
  }
  if (!w.allFinite()) throw DomainError("fit_weights: non-finite solution");
  return {w(0), w(1), w(2)};
}

inline EnsembleWeights fit_weights(const EnsembleInputs& in) {
  return fit_weights(in.pcnn, in.ea, in.bgwa, in.targets);
}

inline ScoreMatrix ensemble_predict(const ScoreMatrix& p_pcnn, const ScoreMatrix& p_ea,
                                    const ScoreMatrix& p_bgwa, const EnsembleWeights& w) {
  if (!p_pcnn.same_shape(p_ea) || !p_pcnn.same_shape(p_bgwa)) {
    throw DimensionError("ensemble_predict: score matrices differ in shape");
  }
  ScoreMatrix out(p_pcnn.rows, p_pcnn.cols);
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    out.data[k] = w.alpha * p_pcnn.data[k] + w.beta * p_ea.data[k] + w.gamma * p_bgwa.data[k];
  }
  return out;
}

inline ScoreMatrix ensemble_predict(const EnsembleInputs& in, const EnsembleWeights& w) {
  return ensemble_predict(in.pcnn, in.ea, in.bgwa, w);
}

// "alpha <v>\nbeta <v>\ngamma <v>\n"
inline void write_weights(std::ostream& out, const EnsembleWeights& w) {
  out << "alpha " << format_score(w.alpha) << "\nbeta " << format_score(w.beta) << "\ngamma "
      << format_score(w.gamma) << "\n";
}

inline EnsembleWeights read_weights(std::istream& in, const std::string& source) {
  std::map<std::string, double> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream row(line);
    std::string key;
    double value = 0;
    if (!(row >> key)) continue;
    if (!(row >> value) || !std::isfinite(value) || (key != "alpha" && key != "beta" &&
                                                     key != "gamma")) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected alpha|beta|gamma <value>");
    }
    seen[key] = value;
  }
  if (seen.size() != 3) throw ParseError(source + ": weights file needs alpha, beta and gamma");
  return {seen["alpha"], seen["beta"], seen["gamma"]};
}

inline EnsembleWeights read_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open weights file " + path);
  return read_weights(in, path);
}

}  // namespace dsre
