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
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dsre/errors.hpp"
#include "dsre/rng.hpp"
#include "dsre/tensor.hpp"

// Forward/backward pairs for the handful of operations the encoders use.
// Backward functions accumulate (+=) into caller-owned gradient buffers.
namespace dsre {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += aip * b(p, j);
    }
  }
  return c;
}

// da += dc * b^T, db += a^T * dc. Either output may be null.
inline void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc,
                            Tensor* da, Tensor* db) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (dc.rows() != m || dc.cols() != n) {
    throw DimensionError("matmul_backward: upstream gradient " +
                         shape_string(dc.shape()) + " does not match output [" +
                         std::to_string(m) + "x" + std::to_string(n) + "]");
  }
  if (da) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += dc(i, j) * b(p, j);
        (*da)(i, p) += s;
      }
  }
  if (db) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a(i, p);
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) (*db)(p, j) += aip * dc(i, j);
      }
  }
}

// y = W x + b over raw spans; W is [out x in] row-major. Used on the hot paths
// where building Tensors per time step would dominate.
inline void affine(std::span<const double> w, std::span<const double> x,
                   std::span<const double> bias, std::span<double> y) {
  const std::size_t out = y.size(), in = x.size();
  for (std::size_t o = 0; o < out; ++o) {
    double acc = bias.empty() ? 0.0 : bias[o];
    const double* wr = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
}

// y += W x.
inline void gemv_acc(std::span<const double> w, std::span<const double> x,
                     std::span<double> y) {
  const std::size_t out = y.size(), in = x.size();
  for (std::size_t o = 0; o < out; ++o) {
    double acc = 0.0;
    const double* wr = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
    y[o] += acc;
  }
}

// dx += W^T dy.
inline void gemv_t_acc(std::span<const double> w, std::span<const double> dy,
                       std::span<double> dx) {
  const std::size_t out = dy.size(), in = dx.size();
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    const double* wr = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) dx[i] += wr[i] * g;
  }
}

// dW += dy x^T.
inline void outer_acc(std::span<const double> dy, std::span<const double> x,
                      std::span<double> dw) {
  const std::size_t out = dy.size(), in = x.size();
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    double* wr = dw.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) wr[i] += g * x[i];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
// softmax

inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("softmax: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& o : out) o /= total;
  return out;
}

inline Tensor softmax(const Tensor& v) {
  return Tensor({v.size()}, softmax(v.values()));
}

// dx_i = y_i (dy_i - sum_j y_j dy_j).
inline std::vector<double> softmax_backward(std::span<const double> y,
                                            std::span<const double> dy) {
  const double s = dot(y, dy);
  std::vector<double> dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - s);
  return dx;
}

// ---------------------------------------------------------------------------
// piecewise max pooling

struct PooledFeatures {
  Tensor pooled;                     // [3c], laid out [seg1 | seg2 | seg3]
  std::vector<std::size_t> argmax;   // winning row per pooled entry
};

// Segments are closed intervals [0, p1], [p1, p2], [p2, L-1]: the entity rows
// belong to both neighbouring segments, so none is ever empty. Ties go to the
// first row encountered.
inline PooledFeatures piecewise_max_pool(const Tensor& features, std::size_t p1,
                                         std::size_t p2) {
  const std::size_t len = features.rows(), c = features.cols();
  if (p1 > p2 || p2 >= len) {
    throw IndexError("piecewise_max_pool: need p1 <= p2 < L, got p1=" +
                     std::to_string(p1) + " p2=" + std::to_string(p2) +
                     " L=" + std::to_string(len));
  }
  const std::size_t bounds[3][2] = {{0, p1}, {p1, p2}, {p2, len - 1}};
  PooledFeatures out{Tensor({3 * c}), std::vector<std::size_t>(3 * c)};
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = bounds[s][0];
      double best_v = features(best, ch);
      for (std::size_t r = bounds[s][0] + 1; r <= bounds[s][1]; ++r) {
        if (features(r, ch) > best_v) {
          best_v = features(r, ch);
          best = r;
        }
      }
      out.pooled[s * c + ch] = best_v;
      out.argmax[s * c + ch] = best;
    }
  }
  return out;
}

inline void piecewise_max_pool_backward(const std::vector<std::size_t>& argmax,
                                        std::span<const double> dpooled,
                                        Tensor& dfeatures) {
  const std::size_t c = dfeatures.cols();
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    dfeatures(argmax[i], i % c) += dpooled[i];
  }
}

// ---------------------------------------------------------------------------
// elementwise

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor tanh(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = std::tanh(v);
  return y;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

// Backward rules expressed in terms of the forward output y.
inline Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "tanh_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y[i] * y[i];
  return dx;
}

inline Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "sigmoid_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
  return dx;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

// d(a*b): da = dc*b, db = dc*a.
inline void mul_backward(const Tensor& a, const Tensor& b, const Tensor& dc,
                         Tensor* da, Tensor* db) {
  require_same_shape(a, dc, "mul_backward");
  for (std::size_t i = 0; i < dc.size(); ++i) {
    if (da) (*da)[i] += dc[i] * b[i];
    if (db) (*db)[i] += dc[i] * a[i];
  }
}

// ---------------------------------------------------------------------------
// dropout

struct DropoutResult {
  Tensor output;
  std::vector<double> mask;  // per-entry multiplier: 0 or 1/(1-rate)
};

// Inverted dropout: survivors are scaled at train time so eval is identity.
inline DropoutResult dropout(const Tensor& x, double rate, Mode mode, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw DomainError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult r{x, std::vector<double>(x.size(), 1.0)};
  if (mode == Mode::kEval || rate == 0.0) return r;
  if (!rng) throw ContractError("dropout: train mode requires an Rng");
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.mask[i] = rng->bernoulli(rate) ? 0.0 : keep_scale;
    r.output[i] *= r.mask[i];
  }
  return r;
}

inline Tensor dropout_backward(const std::vector<double>& mask, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// optimisation

inline void sgd_step(const ParameterList& params, double lr) {
  for (Parameter* p : params) {
    auto v = p->value.values();
    auto g = p->grad.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

// ---------------------------------------------------------------------------
// gradient checking

inline double scalar_loss(double v) { return v; }

inline double scalar_loss(const Tensor& t) {
  if (t.size() != 1) {
    throw ContractError("grad_check: loss must be scalar, got shape " +
                        shape_string(t.shape()));
  }
  return t[0];
}

// Compares param.grad (filled by the caller's backward pass) against central
// differences of `loss`. Returns the maximum over checked coordinates of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). With max_coords > 0
// only that many coordinates, sampled with `sample_seed`, are checked.
template <class LossFn>
double grad_check(LossFn&& loss, Parameter& param, double eps = 1e-5,
                  std::size_t max_coords = 0, std::uint64_t sample_seed = 0) {
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");
  std::vector<std::size_t> coords(param.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (max_coords > 0 && max_coords < coords.size()) {
    Rng rng(sample_seed);
    rng.shuffle(std::span<std::size_t>(coords));
    coords.resize(max_coords);
  }
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double saved = param.value[i];
    param.value[i] = saved + eps;
    const double plus = scalar_loss(loss());
    param.value[i] = saved - eps;
    const double minus = scalar_loss(loss());
    param.value[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double analytic = param.grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace dsre
