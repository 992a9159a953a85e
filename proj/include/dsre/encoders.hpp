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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsre/corpus.hpp"
#include "dsre/errors.hpp"
#include "dsre/ops.hpp"
#include "dsre/rng.hpp"
#include "dsre/tensor.hpp"

namespace dsre {

enum class ModelKind { kPcnn, kBgwa, kEa };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kPcnn: return "pcnn";
    case ModelKind::kBgwa: return "bgwa";
    case ModelKind::kEa: return "ea";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "pcnn") return ModelKind::kPcnn;
  if (s == "bgwa") return ModelKind::kBgwa;
  if (s == "ea") return ModelKind::kEa;
  throw ConfigError("unknown model '" + s + "' (expected pcnn, bgwa or ea)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::kPcnn;
  std::size_t vocab_size = 2;
  std::size_t num_relations = 2;
  std::size_t word_dim = 50;
  std::size_t position_dim = 5;
  std::size_t max_position = 30;
  std::size_t filters = 230;
  std::size_t window = 3;
  std::size_t hidden = 115;
  double dropout = 0.5;

  std::size_t input_dim() const { return word_dim + 2 * position_dim; }
  std::size_t gru_width() const { return 2 * hidden; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must include <pad> and <unk>");
    if (num_relations < 1) throw ConfigError("num_relations must be positive");
    if (!word_dim || !position_dim || !filters || !hidden) {
      throw ConfigError("model dimensions must be positive");
    }
    if (window % 2 == 0) throw ConfigError("convolution window must be odd");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// Softmax over relations plus any attention maps the encoder produced, keyed
// "word", "entity1", "entity2".
struct ModelOutput {
  std::vector<double> logits;
  Tensor probs;
  std::map<std::string, std::vector<double>> attention;
};

// ---------------------------------------------------------------------------
// Input embedding: word vector ++ two position vectors per token.

struct InputEmbedding {
  Parameter words;
  Parameter pos1;
  Parameter pos2;
  std::size_t max_position = 30;

  InputEmbedding() = default;
  explicit InputEmbedding(const ModelConfig& cfg)
      : words("embedding.words", {cfg.vocab_size, cfg.word_dim},
              InitSpec::glorot(1, cfg.word_dim)),
        pos1("embedding.pos1", {2 * cfg.max_position + 1, cfg.position_dim},
             InitSpec::glorot(1, cfg.position_dim)),
        pos2("embedding.pos2", {2 * cfg.max_position + 1, cfg.position_dim},
             InitSpec::glorot(1, cfg.position_dim)),
        max_position(cfg.max_position) {}

  std::size_t word_dim() const { return words.value.cols(); }
  std::size_t width() const { return words.value.cols() + 2 * pos1.value.cols(); }

  void initialize(Rng& rng) {
    words.initialize(rng);
    pos1.initialize(rng);
    pos2.initialize(rng);
    for (double& v : words.value.row(Vocabulary::kPad)) v = 0.0;
  }

  ParameterList parameters() { return {&words, &pos1, &pos2}; }

  std::size_t position_row(int offset) const {
    const int shifted = offset + static_cast<int>(max_position);
    if (shifted < 0 || static_cast<std::size_t>(shifted) >= pos1.value.rows()) {
      throw IndexError("position offset " + std::to_string(offset) +
                       " outside embedding table");
    }
    return static_cast<std::size_t>(shifted);
  }

  Tensor embed(const EncodedInstance& inst) const {
    const std::size_t m = inst.length(), dw = word_dim(), dp = pos1.value.cols();
    if (m == 0) throw DimensionError("embed: empty instance");
    Tensor x({m, width()});
    for (std::size_t j = 0; j < m; ++j) {
      const WordId id = inst.word_ids[j];
      if (id >= words.value.rows()) {
        throw IndexError("word id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(words.value.rows()));
      }
      auto row = x.row(j);
      auto w = words.value.row(id);
      std::copy(w.begin(), w.end(), row.begin());
      auto a = pos1.value.row(position_row(inst.pos1[j]));
      std::copy(a.begin(), a.end(), row.begin() + dw);
      auto b = pos2.value.row(position_row(inst.pos2[j]));
      std::copy(b.begin(), b.end(), row.begin() + dw + dp);
    }
    return x;
  }

  // The PAD row never receives gradient, which keeps it frozen at zero.
  void backward(const EncodedInstance& inst, const Tensor& dx) {
    const std::size_t dw = word_dim(), dp = pos1.value.cols();
    for (std::size_t j = 0; j < inst.length(); ++j) {
      auto g = dx.row(j);
      if (inst.word_ids[j] != Vocabulary::kPad) {
        auto gw = words.grad.row(inst.word_ids[j]);
        for (std::size_t i = 0; i < dw; ++i) gw[i] += g[i];
      }
      auto g1 = pos1.grad.row(position_row(inst.pos1[j]));
      auto g2 = pos2.grad.row(position_row(inst.pos2[j]));
      for (std::size_t i = 0; i < dp; ++i) {
        g1[i] += g[dw + i];
        g2[i] += g[dw + dp + i];
      }
    }
  }

  // Mean word vector over an entity span.
  std::vector<double> entity(const EncodedInstance& inst, Span span) const {
    std::vector<double> e(word_dim(), 0.0);
    const double scale = 1.0 / static_cast<double>(span.end - span.start);
    for (std::size_t j = span.start; j < span.end; ++j) {
      auto w = words.value.row(inst.word_ids[j]);
      for (std::size_t i = 0; i < e.size(); ++i) e[i] += scale * w[i];
    }
    return e;
  }
};

// ---------------------------------------------------------------------------
// Convolution + piecewise pooling + tanh (the PCNN sentence encoder).

struct ConvPoolParams {
  Parameter filters;  // [c x window*d]
  Parameter bias;     // [c]

  ConvPoolParams() = default;
  ConvPoolParams(const std::string& prefix, std::size_t c, std::size_t window,
                 std::size_t d)
      : filters(prefix + ".filters", {c, window * d}, InitSpec::glorot(window * d, c)),
        bias(prefix + ".filter_bias", {c}) {}

  ParameterList parameters() { return {&filters, &bias}; }
};

struct ConvPoolTrace {
  std::vector<std::vector<double>> windows;  // zero-padded input window per row
  Tensor conv;                               // [M x c]
  PooledFeatures pool;                       // [3c]
  Tensor activation;                         // tanh(pool), [3c]
};

// Same-length 1-D convolution: (window-1)/2 zero rows are padded on each side.
inline Tensor conv1d(const Tensor& x, const ConvPoolParams& p,
                     std::vector<std::vector<double>>* windows = nullptr) {
  const std::size_t m = x.rows(), d = x.cols(), c = p.filters.value.rows();
  if (p.filters.value.cols() % d != 0) {
    throw DimensionError("conv1d: filter width " + std::to_string(p.filters.value.cols()) +
                         " is not a multiple of input width " + std::to_string(d));
  }
  const std::size_t window = p.filters.value.cols() / d;
  const std::size_t pad = (window - 1) / 2;
  Tensor conv({m, c});
  std::vector<double> win(window * d);
  if (windows) windows->assign(m, {});
  for (std::size_t t = 0; t < m; ++t) {
    std::fill(win.begin(), win.end(), 0.0);
    for (std::size_t k = 0; k < window; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
      auto r = x.row(static_cast<std::size_t>(src));
      std::copy(r.begin(), r.end(), win.begin() + k * d);
    }
    affine(p.filters.value.values(), win, p.bias.value.values(), conv.row(t));
    if (windows) (*windows)[t] = win;
  }
  return conv;
}

inline ConvPoolTrace conv_pool_forward(const Tensor& x, std::size_t p1, std::size_t p2,
                                       const ConvPoolParams& p) {
  ConvPoolTrace tr;
  tr.conv = conv1d(x, p, &tr.windows);
  tr.pool = piecewise_max_pool(tr.conv, p1, p2);
  tr.activation = tanh(tr.pool.pooled);
  return tr;
}

inline void conv_pool_backward(const ConvPoolTrace& tr, std::span<const double> dact,
                               ConvPoolParams& p, Tensor* dx) {
  const std::size_t m = tr.conv.rows(), c = tr.conv.cols();
  std::vector<double> dpool(dact.size());
  for (std::size_t i = 0; i < dact.size(); ++i) {
    const double y = tr.activation[i];
    dpool[i] = dact[i] * (1.0 - y * y);
  }
  Tensor dconv({m, c});
  piecewise_max_pool_backward(tr.pool.argmax, dpool, dconv);
  const std::size_t wd = p.filters.value.cols();
  std::vector<double> dwin(wd);
  for (std::size_t t = 0; t < m; ++t) {
    auto g = dconv.row(t);
    if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
    outer_acc(g, tr.windows[t], p.filters.grad.values());
    for (std::size_t f = 0; f < c; ++f) p.bias.grad[f] += g[f];
    if (!dx) continue;
    std::fill(dwin.begin(), dwin.end(), 0.0);
    gemv_t_acc(p.filters.value.values(), g, dwin);
    const std::size_t d = dx->cols(), window = wd / d, pad = (window - 1) / 2;
    for (std::size_t k = 0; k < window; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
      auto r = dx->row(static_cast<std::size_t>(src));
      for (std::size_t i = 0; i < d; ++i) r[i] += dwin[k * d + i];
    }
  }
}

// ---------------------------------------------------------------------------
// Output layer: dropout -> linear -> softmax.

struct OutputParams {
  Parameter weight;  // [rl x in]
  Parameter bias;    // [rl]

  OutputParams() = default;
  OutputParams(std::size_t rl, std::size_t in)
      : weight("output.weight", {rl, in}, InitSpec::glorot(in, rl)),
        bias("output.bias", {rl}) {}

  ParameterList parameters() { return {&weight, &bias}; }
};

struct OutputTrace {
  DropoutResult dropped;
};

inline ModelOutput output_forward(const Tensor& features, const OutputParams& p,
                                  const ForwardOptions& opts, OutputTrace* tr) {
  if (p.weight.value.cols() != features.size()) {
    throw DimensionError("output layer expects " + std::to_string(p.weight.value.cols()) +
                         " features, got " + std::to_string(features.size()));
  }
  DropoutResult dropped = dropout(features, opts.dropout, opts.mode, opts.rng);
  ModelOutput out;
  out.logits.resize(p.weight.value.rows());
  affine(p.weight.value.values(), dropped.output.values(), p.bias.value.values(),
         out.logits);
  out.probs = Tensor({out.logits.size()}, softmax(out.logits));
  if (tr) tr->dropped = std::move(dropped);
  return out;
}

// Returns the gradient w.r.t. the pre-dropout features.
inline std::vector<double> output_backward(const OutputTrace& tr,
                                           std::span<const double> dlogits,
                                           OutputParams& p) {
  const auto& x = tr.dropped.output;
  outer_acc(dlogits, x.values(), p.weight.grad.values());
  for (std::size_t o = 0; o < dlogits.size(); ++o) p.bias.grad[o] += dlogits[o];
  std::vector<double> dx(x.size(), 0.0);
  gemv_t_acc(p.weight.value.values(), dlogits, dx);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= tr.dropped.mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// PCNN

struct PcnnParams {
  ConvPoolParams conv;
  OutputParams output;

  PcnnParams() = default;
  PcnnParams(std::size_t c, std::size_t window, std::size_t d, std::size_t rl)
      : conv("pcnn", c, window, d), output(rl, 3 * c) {}

  ParameterList parameters() {
    return {&conv.filters, &conv.bias, &output.weight, &output.bias};
  }
};

struct PcnnTrace {
  ConvPoolTrace conv;
  OutputTrace output;
};

inline ModelOutput pcnn_forward(const Tensor& x, std::size_t p1, std::size_t p2,
                                const PcnnParams& params, const ForwardOptions& opts,
                                PcnnTrace* tr = nullptr) {
  ConvPoolTrace conv = conv_pool_forward(x, p1, p2, params.conv);
  OutputTrace otr;
  ModelOutput out = output_forward(conv.activation, params.output, opts, &otr);
  if (tr) *tr = {std::move(conv), std::move(otr)};
  return out;
}

inline void pcnn_backward(const PcnnTrace& tr, std::span<const double> dlogits,
                          PcnnParams& params, Tensor* dx) {
  auto dfeat = output_backward(tr.output, dlogits, params.output);
  conv_pool_backward(tr.conv, dfeat, params.conv, dx);
}

// ---------------------------------------------------------------------------
// Bi-GRU

struct GruParams {
  Parameter wz, wr, wh;  // [h x d]
  Parameter uz, ur, uh;  // [h x h]
  Parameter bz, br, bh;  // [h]

  GruParams() = default;
  GruParams(const std::string& prefix, std::size_t d, std::size_t h)
      : wz(prefix + ".wz", {h, d}, InitSpec::glorot(d, h)),
        wr(prefix + ".wr", {h, d}, InitSpec::glorot(d, h)),
        wh(prefix + ".wh", {h, d}, InitSpec::glorot(d, h)),
        uz(prefix + ".uz", {h, h}, InitSpec::glorot(h, h)),
        ur(prefix + ".ur", {h, h}, InitSpec::glorot(h, h)),
        uh(prefix + ".uh", {h, h}, InitSpec::glorot(h, h)),
        bz(prefix + ".bz", {h}),
        br(prefix + ".br", {h}),
        bh(prefix + ".bh", {h}) {}

  std::size_t hidden() const { return bz.size(); }
  ParameterList parameters() { return {&wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh}; }
};

struct GruStep {
  std::vector<double> z;   // update gate
  std::vector<double> r;   // reset gate
  std::vector<double> hc;  // candidate state
  std::vector<double> h;   // new state
};

inline GruStep gru_step(const GruParams& p, std::span<const double> x,
                        std::span<const double> hprev) {
  const std::size_t h = p.hidden();
  GruStep s{std::vector<double>(h), std::vector<double>(h), std::vector<double>(h),
            std::vector<double>(h)};
  affine(p.wz.value.values(), x, p.bz.value.values(), s.z);
  gemv_acc(p.uz.value.values(), hprev, s.z);
  affine(p.wr.value.values(), x, p.br.value.values(), s.r);
  gemv_acc(p.ur.value.values(), hprev, s.r);
  for (std::size_t i = 0; i < h; ++i) {
    s.z[i] = sigmoid(s.z[i]);
    s.r[i] = sigmoid(s.r[i]);
  }
  std::vector<double> gated(h);
  for (std::size_t i = 0; i < h; ++i) gated[i] = s.r[i] * hprev[i];
  affine(p.wh.value.values(), x, p.bh.value.values(), s.hc);
  gemv_acc(p.uh.value.values(), gated, s.hc);
  for (std::size_t i = 0; i < h; ++i) {
    s.hc[i] = std::tanh(s.hc[i]);
    s.h[i] = (1.0 - s.z[i]) * hprev[i] + s.z[i] * s.hc[i];
  }
  return s;
}

// Accumulates parameter gradients; adds into dx and dhprev.
inline void gru_step_backward(GruParams& p, std::span<const double> x,
                              std::span<const double> hprev, const GruStep& s,
                              std::span<const double> dh, std::span<double> dx,
                              std::span<double> dhprev) {
  const std::size_t h = p.hidden();
  std::vector<double> dah(h), daz(h), dar(h), gated(h), dgated(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    dhprev[i] += dh[i] * (1.0 - s.z[i]);
    dah[i] = dh[i] * s.z[i] * (1.0 - s.hc[i] * s.hc[i]);
    daz[i] = dh[i] * (s.hc[i] - hprev[i]) * s.z[i] * (1.0 - s.z[i]);
    gated[i] = s.r[i] * hprev[i];
  }
  outer_acc(dah, x, p.wh.grad.values());
  outer_acc(dah, gated, p.uh.grad.values());
  gemv_t_acc(p.uh.value.values(), dah, dgated);
  for (std::size_t i = 0; i < h; ++i) {
    p.bh.grad[i] += dah[i];
    dar[i] = dgated[i] * hprev[i] * s.r[i] * (1.0 - s.r[i]);
    dhprev[i] += dgated[i] * s.r[i];
  }
  outer_acc(dar, x, p.wr.grad.values());
  outer_acc(dar, hprev, p.ur.grad.values());
  outer_acc(daz, x, p.wz.grad.values());
  outer_acc(daz, hprev, p.uz.grad.values());
  for (std::size_t i = 0; i < h; ++i) {
    p.br.grad[i] += dar[i];
    p.bz.grad[i] += daz[i];
  }
  gemv_t_acc(p.ur.value.values(), dar, dhprev);
  gemv_t_acc(p.uz.value.values(), daz, dhprev);
  gemv_t_acc(p.wh.value.values(), dah, dx);
  gemv_t_acc(p.wr.value.values(), dar, dx);
  gemv_t_acc(p.wz.value.values(), daz, dx);
}

struct BiGruParams {
  GruParams forward;
  GruParams backward;

  BiGruParams() = default;
  BiGruParams(std::size_t d, std::size_t h) : forward("gru.fwd", d, h), backward("gru.bwd", d, h) {}

  ParameterList parameters() {
    ParameterList out = forward.parameters();
    for (Parameter* p : backward.parameters()) out.push_back(p);
    return out;
  }
};

struct BiGruTrace {
  std::vector<GruStep> fwd;  // fwd[t]: state after reading x_0..x_t
  std::vector<GruStep> bwd;  // bwd[t]: state after reading x_{M-1}..x_t
};

// Row t of the result is [h^f_t || h^b_t].
inline Tensor bigru_forward(const Tensor& x, const BiGruParams& p, BiGruTrace* tr = nullptr) {
  const std::size_t m = x.rows(), h = p.forward.hidden();
  if (m == 0) throw DimensionError("bigru_forward: empty sequence");
  if (p.forward.wz.value.cols() != x.cols()) {
    throw DimensionError("bigru_forward: input width " + std::to_string(x.cols()) +
                         " does not match GRU input " +
                         std::to_string(p.forward.wz.value.cols()));
  }
  BiGruTrace local;
  BiGruTrace& t = tr ? *tr : local;
  t.fwd.assign(m, {});
  t.bwd.assign(m, {});
  const std::vector<double> zeros(h, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    t.fwd[i] = gru_step(p.forward, x.row(i), i == 0 ? std::span<const double>(zeros)
                                                    : std::span<const double>(t.fwd[i - 1].h));
  }
  for (std::size_t i = m; i-- > 0;) {
    t.bwd[i] = gru_step(p.backward, x.row(i), i == m - 1 ? std::span<const double>(zeros)
                                                         : std::span<const double>(t.bwd[i + 1].h));
  }
  Tensor w({m, 2 * h});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(t.fwd[i].h.begin(), t.fwd[i].h.end(), w.row(i).begin());
    std::copy(t.bwd[i].h.begin(), t.bwd[i].h.end(), w.row(i).begin() + h);
  }
  return w;
}

inline void bigru_backward(const Tensor& x, const BiGruTrace& t, const Tensor& dw,
                           BiGruParams& p, Tensor* dx) {
  const std::size_t m = x.rows(), h = p.forward.hidden();
  const std::vector<double> zeros(h, 0.0);
  std::vector<double> carry(h, 0.0), dh(h), dhprev(h), scratch(x.cols());
  auto dx_row = [&](std::size_t i) -> std::span<double> {
    if (dx) return dx->row(i);
    std::fill(scratch.begin(), scratch.end(), 0.0);
    return scratch;
  };
  for (std::size_t i = m; i-- > 0;) {
    for (std::size_t k = 0; k < h; ++k) dh[k] = dw(i, k) + carry[k];
    std::fill(dhprev.begin(), dhprev.end(), 0.0);
    auto hprev = i == 0 ? std::span<const double>(zeros) : std::span<const double>(t.fwd[i - 1].h);
    gru_step_backward(p.forward, x.row(i), hprev, t.fwd[i], dh, dx_row(i), dhprev);
    carry = dhprev;
  }
  std::fill(carry.begin(), carry.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < h; ++k) dh[k] = dw(i, h + k) + carry[k];
    std::fill(dhprev.begin(), dhprev.end(), 0.0);
    auto hprev = i == m - 1 ? std::span<const double>(zeros) : std::span<const double>(t.bwd[i + 1].h);
    gru_step_backward(p.backward, x.row(i), hprev, t.bwd[i], dh, dx_row(i), dhprev);
    carry = dhprev;
  }
}

// ---------------------------------------------------------------------------
// Bilinear attention: u_j = z_j^T A r, a = softmax(u).

struct AttentionScores {
  std::vector<double> query;  // A r
  std::vector<double> u;
  std::vector<double> a;
};

inline AttentionScores bilinear_attention(const Tensor& rows, const Tensor& A,
                                          const Tensor& r) {
  const std::size_t g = rows.cols();
  if (A.rank() != 2 || A.rows() != g || A.cols() != g || r.size() != g) {
    throw DimensionError("attention: rows " + shape_string(rows.shape()) + ", A " +
                         shape_string(A.shape()) + ", r " + shape_string(r.shape()));
  }
  AttentionScores s;
  s.query.resize(g);
  affine(A.values(), r.values(), {}, s.query);
  s.u.resize(rows.rows());
  for (std::size_t j = 0; j < rows.rows(); ++j) s.u[j] = dot(rows.row(j), s.query);
  s.a = softmax(s.u);
  return s;
}

// Given dL/da, accumulates dL/drows (if non-null), dA and dr.
inline void bilinear_attention_backward(const Tensor& rows, const AttentionScores& s,
                                        std::span<const double> da, Tensor* drows,
                                        Parameter& A, Parameter& r) {
  const std::size_t g = rows.cols();
  const auto du = softmax_backward(s.a, da);
  std::vector<double> dq(g, 0.0);
  for (std::size_t j = 0; j < rows.rows(); ++j) {
    auto z = rows.row(j);
    for (std::size_t k = 0; k < g; ++k) dq[k] += du[j] * z[k];
    if (drows) {
      auto dz = drows->row(j);
      for (std::size_t k = 0; k < g; ++k) dz[k] += du[j] * s.query[k];
    }
  }
  outer_acc(dq, r.value.values(), A.grad.values());
  gemv_t_acc(A.value.values(), dq, r.grad.values());
}

inline std::vector<double> word_attention(const Tensor& w, const Tensor& A, const Tensor& r) {
  return bilinear_attention(w, A, r).a;
}

// Entity-conditioned scores u_j = [x_j, e]^T A r. The entity term
// e . (A r)[d:] is identical for every word and cancels in the softmax, so the
// weights come from the word term alone; u keeps the full bilinear value.
inline AttentionScores entity_attention_scores(const Tensor& x, std::span<const double> e_emb,
                                               const Tensor& A, const Tensor& r) {
  const std::size_t d = x.cols(), g = d + e_emb.size();
  if (A.rank() != 2 || A.rows() != g || A.cols() != g || r.size() != g) {
    throw DimensionError("entity attention: x " + shape_string(x.shape()) + " + entity " +
                         std::to_string(e_emb.size()) + ", A " + shape_string(A.shape()) +
                         ", r " + shape_string(r.shape()));
  }
  AttentionScores s;
  s.query.resize(g);
  affine(A.values(), r.values(), {}, s.query);
  const std::span<const double> q(s.query);
  const double entity_term = dot(e_emb, q.subspan(d));
  std::vector<double> word_term(x.rows());
  s.u.resize(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) {
    word_term[j] = dot(x.row(j), q.subspan(0, d));
    s.u[j] = word_term[j] + entity_term;
  }
  s.a = softmax(word_term);
  return s;
}

inline void entity_attention_backward(const Tensor& x, const AttentionScores& s,
                                      std::span<const double> da, Tensor* dx, Parameter& A,
                                      Parameter& r) {
  const std::size_t d = x.cols();
  const auto du = softmax_backward(s.a, da);
  std::vector<double> dq(s.query.size(), 0.0);
  for (std::size_t j = 0; j < x.rows(); ++j) {
    auto xj = x.row(j);
    for (std::size_t k = 0; k < d; ++k) dq[k] += du[j] * xj[k];
    if (dx) {
      auto g = dx->row(j);
      for (std::size_t k = 0; k < d; ++k) g[k] += du[j] * s.query[k];
    }
  }
  outer_acc(dq, r.value.values(), A.grad.values());
  gemv_t_acc(A.value.values(), dq, r.grad.values());
}

inline std::vector<double> entity_attention(const Tensor& x, std::span<const double> e_emb,
                                            const Tensor& A, const Tensor& r) {
  return entity_attention_scores(x, e_emb, A, r).a;
}

// Rows scaled by their attention weight.
inline Tensor scale_rows(const Tensor& rows, std::span<const double> a) {
  Tensor out = rows;
  for (std::size_t j = 0; j < rows.rows(); ++j)
    for (double& v : out.row(j)) v *= a[j];
  return out;
}

// Backward of scale_rows: drows += a_j * dout_j and returns da_j = dout_j . rows_j.
inline std::vector<double> scale_rows_backward(const Tensor& rows, std::span<const double> a,
                                               const Tensor& dout, Tensor* drows) {
  std::vector<double> da(rows.rows());
  for (std::size_t j = 0; j < rows.rows(); ++j) {
    da[j] = dot(dout.row(j), rows.row(j));
    if (drows) {
      auto dr = drows->row(j);
      auto g = dout.row(j);
      for (std::size_t k = 0; k < dr.size(); ++k) dr[k] += a[j] * g[k];
    }
  }
  return da;
}

// ---------------------------------------------------------------------------
// BGWA

struct BgwaParams {
  BiGruParams gru;
  Parameter attn_matrix;  // A, [g x g]
  Parameter attn_query;   // r, [g]
  OutputParams output;

  BgwaParams() = default;
  BgwaParams(std::size_t d, std::size_t h, std::size_t rl)
      : gru(d, h),
        attn_matrix("bgwa.A", {2 * h, 2 * h}, InitSpec::glorot(2 * h, 2 * h)),
        attn_query("bgwa.r", {2 * h}, InitSpec::glorot(2 * h, 1)),
        output(rl, 6 * h) {}

  ParameterList parameters() {
    ParameterList out = gru.parameters();
    for (Parameter* p : {&attn_matrix, &attn_query, &output.weight, &output.bias}) out.push_back(p);
    return out;
  }
};

struct BgwaTrace {
  BiGruTrace gru;
  Tensor states;      // w, [M x g]
  AttentionScores attention;
  Tensor weighted;    // a_j * w_j
  PooledFeatures pool;
  Tensor activation;  // tanh(pool)
  OutputTrace output;
};

inline ModelOutput bgwa_forward(const Tensor& x, std::size_t p1, std::size_t p2,
                                const BgwaParams& params, const ForwardOptions& opts,
                                BgwaTrace* tr = nullptr) {
  BgwaTrace local;
  BgwaTrace& t = tr ? *tr : local;
  t.states = bigru_forward(x, params.gru, &t.gru);
  t.attention = bilinear_attention(t.states, params.attn_matrix.value, params.attn_query.value);
  t.weighted = scale_rows(t.states, t.attention.a);
  t.pool = piecewise_max_pool(t.weighted, p1, p2);
  t.activation = tanh(t.pool.pooled);
  ModelOutput out = output_forward(t.activation, params.output, opts, &t.output);
  out.attention["word"] = t.attention.a;
  return out;
}

inline void bgwa_backward(const Tensor& x, const BgwaTrace& t, std::span<const double> dlogits,
                          BgwaParams& params, Tensor* dx) {
  auto dact = output_backward(t.output, dlogits, params.output);
  for (std::size_t i = 0; i < dact.size(); ++i) {
    dact[i] *= 1.0 - t.activation[i] * t.activation[i];
  }
  Tensor dweighted(t.weighted.shape());
  piecewise_max_pool_backward(t.pool.argmax, dact, dweighted);
  Tensor dstates(t.states.shape());
  const auto da = scale_rows_backward(t.states, t.attention.a, dweighted, &dstates);
  bilinear_attention_backward(t.states, t.attention, da, &dstates, params.attn_matrix,
                              params.attn_query);
  bigru_backward(x, t.gru, dstates, params.gru, dx);
}

// ---------------------------------------------------------------------------
// EA

struct EaParams {
  ConvPoolParams conv;       // shared-architecture PCNN branch
  Parameter attn_matrix[2];  // A_k, [(d+dw) x (d+dw)]
  Parameter attn_query[2];   // r_k, [d+dw]
  OutputParams output;       // [rl x (3c + 6d)]

  EaParams() = default;
  EaParams(std::size_t c, std::size_t window, std::size_t d, std::size_t dw, std::size_t rl)
      : conv("pcnn", c, window, d),
        attn_matrix{Parameter("ea.A1", {d + dw, d + dw}, InitSpec::glorot(d + dw, d + dw)),
                    Parameter("ea.A2", {d + dw, d + dw}, InitSpec::glorot(d + dw, d + dw))},
        attn_query{Parameter("ea.r1", {d + dw}, InitSpec::glorot(d + dw, 1)),
                   Parameter("ea.r2", {d + dw}, InitSpec::glorot(d + dw, 1))},
        output(rl, 3 * c + 6 * d) {}

  ParameterList parameters() {
    return {&conv.filters, &conv.bias,     &attn_matrix[0], &attn_query[0],
            &attn_matrix[1], &attn_query[1], &output.weight,  &output.bias};
  }
};

struct EaTrace {
  ConvPoolTrace conv;
  AttentionScores attention[2];
  PooledFeatures pool[2];
  OutputTrace output;
};

inline ModelOutput ea_forward(const Tensor& x, std::size_t p1, std::size_t p2,
                              std::span<const double> e1_emb, std::span<const double> e2_emb,
                              const EaParams& params, const ForwardOptions& opts,
                              EaTrace* tr = nullptr) {
  EaTrace local;
  EaTrace& t = tr ? *tr : local;
  t.conv = conv_pool_forward(x, p1, p2, params.conv);
  const std::size_t c3 = t.conv.activation.size(), d3 = 3 * x.cols();
  Tensor features({c3 + 2 * d3});
  std::copy(t.conv.activation.values().begin(), t.conv.activation.values().end(),
            features.values().begin());
  const std::span<const double> embs[2] = {e1_emb, e2_emb};
  for (int k = 0; k < 2; ++k) {
    t.attention[k] = entity_attention_scores(x, embs[k], params.attn_matrix[k].value,
                                             params.attn_query[k].value);
    t.pool[k] = piecewise_max_pool(scale_rows(x, t.attention[k].a), p1, p2);
    std::copy(t.pool[k].pooled.values().begin(), t.pool[k].pooled.values().end(),
              features.values().begin() + c3 + k * d3);
  }
  ModelOutput out = output_forward(features, params.output, opts, &t.output);
  out.attention["entity1"] = t.attention[0].a;
  out.attention["entity2"] = t.attention[1].a;
  return out;
}

// Accumulates into dx ([M x d]). The entity embeddings only enter through the
// softmax-cancelled term, so they receive no gradient.
inline void ea_backward(const Tensor& x, const EaTrace& t, std::span<const double> dlogits,
                        EaParams& params, Tensor* dx) {
  const auto dfeat = output_backward(t.output, dlogits, params.output);
  const std::size_t c3 = t.conv.activation.size(), d3 = 3 * x.cols();
  conv_pool_backward(t.conv, std::span<const double>(dfeat).subspan(0, c3), params.conv, dx);
  for (int k = 0; k < 2; ++k) {
    Tensor dweighted(x.shape());
    piecewise_max_pool_backward(t.pool[k].argmax,
                                std::span<const double>(dfeat).subspan(c3 + k * d3, d3),
                                dweighted);
    const auto da = scale_rows_backward(x, t.attention[k].a, dweighted, dx);
    entity_attention_backward(x, t.attention[k], da, dx, params.attn_matrix[k],
                              params.attn_query[k]);
  }
}

// ---------------------------------------------------------------------------
// Models: input embedding + encoder, behind one polymorphic interface.

struct Trace {
  virtual ~Trace() = default;
  Tensor input;
};

inline double nll_from_logits(std::span<const double> logits, RelationId label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - mx);
  return mx + std::log(total) - logits[label];
}

inline ModelConfig with_kind(ModelConfig c, ModelKind k) {
  c.kind = k;
  return c;
}

class RelationModel {
 public:
  explicit RelationModel(ModelConfig cfg) : config_(std::move(cfg)), embedding_(config_) {
    config_.validate();
  }
  virtual ~RelationModel() = default;
  RelationModel(const RelationModel&) = delete;
  RelationModel& operator=(const RelationModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return config_.kind; }
  InputEmbedding& embedding() { return embedding_; }
  const InputEmbedding& embedding() const { return embedding_; }

  ParameterList parameters() {
    ParameterList out = embedding_.parameters();
    for (Parameter* p : encoder_parameters()) out.push_back(p);
    return out;
  }

  void initialize(Rng& rng) {
    for (Parameter* p : encoder_parameters()) p->initialize(rng);
    embedding_.initialize(rng);
  }

  void zero_grads() { dsre::zero_grads(parameters()); }

  // Eval-mode forward; safe to call concurrently.
  ModelOutput predict(const EncodedInstance& inst) const {
    return forward(inst, ForwardOptions{}, nullptr);
  }

  ForwardOptions train_options(Rng* rng) const {
    return {Mode::kTrain, config_.dropout, rng};
  }

  virtual ModelOutput forward(const EncodedInstance& inst, const ForwardOptions& opts,
                              std::unique_ptr<Trace>* trace) const = 0;

  // Adds the gradient of the loss w.r.t. every parameter, given dL/dlogits.
  virtual void backward(const EncodedInstance& inst, const Trace& trace,
                        std::span<const double> dlogits) = 0;

  // Negative log-likelihood of `label`; with accumulate=true also backprops.
  double nll(const EncodedInstance& inst, RelationId label, const ForwardOptions& opts,
             bool accumulate) {
    if (label >= config_.num_relations) throw IndexError("label outside relation schema");
    std::unique_ptr<Trace> trace;
    ModelOutput out = forward(inst, opts, accumulate ? &trace : nullptr);
    const double loss = nll_from_logits(out.logits, label);
    if (accumulate) {
      std::vector<double> dlogits(out.probs.values().begin(), out.probs.values().end());
      dlogits[label] -= 1.0;
      backward(inst, *trace, dlogits);
    }
    return loss;
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    for (const Parameter* p : const_cast<RelationModel*>(this)->parameters()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    auto params = parameters();
    if (values.size() != params.size()) throw ContractError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(params[i]->value, values[i], "restore");
      params[i]->value = values[i];
    }
  }

 protected:
  virtual ParameterList encoder_parameters() = 0;

  static void check_instance(const EncodedInstance& inst) {
    if (inst.length() == 0) throw DimensionError("empty instance");
  }

  ModelConfig config_;
  InputEmbedding embedding_;
};

class PcnnModel final : public RelationModel {
 public:
  explicit PcnnModel(ModelConfig cfg)
      : RelationModel(with_kind(std::move(cfg), ModelKind::kPcnn)),
        params_(config_.filters, config_.window, config_.input_dim(), config_.num_relations) {}

  PcnnParams& params() { return params_; }
  const PcnnParams& params() const { return params_; }

  ModelOutput forward(const EncodedInstance& inst, const ForwardOptions& opts,
                      std::unique_ptr<Trace>* trace) const override {
    check_instance(inst);
    auto t = std::make_unique<PcnnTraceBox>();
    t->input = embedding_.embed(inst);
    ModelOutput out = pcnn_forward(t->input, inst.first_entity(), inst.second_entity(), params_,
                                   opts, trace ? &t->body : nullptr);
    if (trace) *trace = std::move(t);
    return out;
  }

  void backward(const EncodedInstance& inst, const Trace& trace,
                std::span<const double> dlogits) override {
    const auto& t = static_cast<const PcnnTraceBox&>(trace);
    Tensor dx(t.input.shape());
    pcnn_backward(t.body, dlogits, params_, &dx);
    embedding_.backward(inst, dx);
  }

 protected:
  ParameterList encoder_parameters() override { return params_.parameters(); }

 private:
  struct PcnnTraceBox : Trace {
    PcnnTrace body;
  };
  PcnnParams params_;
};

class BgwaModel final : public RelationModel {
 public:
  explicit BgwaModel(ModelConfig cfg)
      : RelationModel(with_kind(std::move(cfg), ModelKind::kBgwa)),
        params_(config_.input_dim(), config_.hidden, config_.num_relations) {}

  BgwaParams& params() { return params_; }
  const BgwaParams& params() const { return params_; }

  ModelOutput forward(const EncodedInstance& inst, const ForwardOptions& opts,
                      std::unique_ptr<Trace>* trace) const override {
    check_instance(inst);
    auto t = std::make_unique<BgwaTraceBox>();
    t->input = embedding_.embed(inst);
    ModelOutput out = bgwa_forward(t->input, inst.first_entity(), inst.second_entity(), params_,
                                   opts, &t->body);
    if (trace) *trace = std::move(t);
    return out;
  }

  void backward(const EncodedInstance& inst, const Trace& trace,
                std::span<const double> dlogits) override {
    const auto& t = static_cast<const BgwaTraceBox&>(trace);
    Tensor dx(t.input.shape());
    bgwa_backward(t.input, t.body, dlogits, params_, &dx);
    embedding_.backward(inst, dx);
  }

 protected:
  ParameterList encoder_parameters() override { return params_.parameters(); }

 private:
  struct BgwaTraceBox : Trace {
    BgwaTrace body;
  };
  BgwaParams params_;
};

class EaModel final : public RelationModel {
 public:
  explicit EaModel(ModelConfig cfg)
      : RelationModel(with_kind(std::move(cfg), ModelKind::kEa)),
        params_(config_.filters, config_.window, config_.input_dim(), config_.word_dim,
                config_.num_relations) {}

  EaParams& params() { return params_; }
  const EaParams& params() const { return params_; }

  ModelOutput forward(const EncodedInstance& inst, const ForwardOptions& opts,
                      std::unique_ptr<Trace>* trace) const override {
    check_instance(inst);
    auto t = std::make_unique<EaTraceBox>();
    t->input = embedding_.embed(inst);
    t->e1 = embedding_.entity(inst, inst.e1_span);
    t->e2 = embedding_.entity(inst, inst.e2_span);
    ModelOutput out = ea_forward(t->input, inst.first_entity(), inst.second_entity(), t->e1,
                                 t->e2, params_, opts, &t->body);
    if (trace) *trace = std::move(t);
    return out;
  }

  void backward(const EncodedInstance& inst, const Trace& trace,
                std::span<const double> dlogits) override {
    const auto& t = static_cast<const EaTraceBox&>(trace);
    Tensor dx(t.input.shape());
    ea_backward(t.input, t.body, dlogits, params_, &dx);
    embedding_.backward(inst, dx);
  }

 protected:
  ParameterList encoder_parameters() override { return params_.parameters(); }

 private:
  struct EaTraceBox : Trace {
    std::vector<double> e1, e2;
    EaTrace body;
  };
  EaParams params_;
};

inline std::unique_ptr<RelationModel> make_model(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::kPcnn: return std::make_unique<PcnnModel>(cfg);
    case ModelKind::kBgwa: return std::make_unique<BgwaModel>(cfg);
    case ModelKind::kEa: return std::make_unique<EaModel>(cfg);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace dsre
