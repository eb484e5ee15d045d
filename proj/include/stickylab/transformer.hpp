// Copyright 2026 The StickyLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// GPT-2 style decoder-only transformer over real-valued tokens.
//
// Tokens are 2-vectors: an x-token is the input point itself and a y-token is
// (y, 0). Both share one linear read-in map; a linear read-out maps the final
// hidden state to a scalar. Blocks are pre-layer-norm with causal multi-head
// attention and a GELU MLP; a final layer norm precedes the read-out.
//
// All parameters live in one flat buffer described by a ParameterLayout, so
// the optimizer, checkpoint writer and gradient checker treat the model as a
// single vector. Tensors are stored row-major as [in, out]; a linear layer is
// y = x W + b with x a row vector.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stickylab/errors.hpp"
#include "stickylab/rng.hpp"
#include "stickylab/taskgen.hpp"

namespace stickylab {

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t n_layers = 3;
  std::size_t n_heads = 2;
  std::size_t max_tokens = 2 * kMaxPoints;
  std::size_t mlp_ratio = 4;

  [[nodiscard]] std::size_t head_dim() const { return embed_dim / n_heads; }
  [[nodiscard]] std::size_t mlp_dim() const { return mlp_ratio * embed_dim; }

  void validate() const {
    if (embed_dim == 0 || n_layers == 0 || n_heads == 0 || max_tokens == 0 || mlp_ratio == 0) {
      throw UsageError("model config dimensions must be positive");
    }
    if (embed_dim % n_heads != 0) {
      throw UsageError("embed_dim " + std::to_string(embed_dim) + " is not divisible by n_heads " +
                       std::to_string(n_heads));
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// GPT-2 medium-like reference architecture (256 wide, 12 deep, 8 heads).
inline ModelConfig paper_model_config() { return {256, 12, 8, 2 * kMaxPoints, 4}; }
/// Single-CPU architecture (64 wide, 3 deep, 2 heads).
inline ModelConfig desk_model_config() { return {64, 3, 2, 2 * kMaxPoints, 4}; }

struct TensorSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  [[nodiscard]] std::size_t size() const { return rows * cols; }
  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

/// Names, shapes and offsets of every tensor in the flat parameter buffer.
class ParameterLayout {
 public:
  struct Block {
    std::size_t ln1_gain, ln1_bias, qkv_weight, qkv_bias, attn_proj_weight, attn_proj_bias;
    std::size_t ln2_gain, ln2_bias, fc_weight, fc_bias, mlp_proj_weight, mlp_proj_bias;
  };

  ParameterLayout() = default;

  explicit ParameterLayout(const ModelConfig& config) {
    config.validate();
    const std::size_t e = config.embed_dim;
    const std::size_t f = config.mlp_dim();
    read_in_weight = add("read_in.weight", 2, e);
    read_in_bias = add("read_in.bias", 1, e);
    position = add("position_embedding", config.max_tokens, e);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      Block b{};
      b.ln1_gain = add(p + "ln1.gain", 1, e);
      b.ln1_bias = add(p + "ln1.bias", 1, e);
      b.qkv_weight = add(p + "attn.qkv.weight", e, 3 * e);
      b.qkv_bias = add(p + "attn.qkv.bias", 1, 3 * e);
      b.attn_proj_weight = add(p + "attn.proj.weight", e, e);
      b.attn_proj_bias = add(p + "attn.proj.bias", 1, e);
      b.ln2_gain = add(p + "ln2.gain", 1, e);
      b.ln2_bias = add(p + "ln2.bias", 1, e);
      b.fc_weight = add(p + "mlp.fc.weight", e, f);
      b.fc_bias = add(p + "mlp.fc.bias", 1, f);
      b.mlp_proj_weight = add(p + "mlp.proj.weight", f, e);
      b.mlp_proj_bias = add(p + "mlp.proj.bias", 1, e);
      blocks.push_back(b);
    }
    final_ln_gain = add("ln_f.gain", 1, e);
    final_ln_bias = add("ln_f.bias", 1, e);
    read_out_weight = add("read_out.weight", e, 1);
    read_out_bias = add("read_out.bias", 1, 1);
  }

  [[nodiscard]] const std::vector<TensorSpec>& tensors() const { return tensors_; }
  [[nodiscard]] std::size_t total() const { return total_; }

  std::size_t read_in_weight = 0, read_in_bias = 0, position = 0;
  std::vector<Block> blocks;
  std::size_t final_ln_gain = 0, final_ln_bias = 0, read_out_weight = 0, read_out_bias = 0;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    const std::size_t offset = total_;
    tensors_.push_back({std::move(name), rows, cols, offset});
    total_ += rows * cols;
    return offset;
  }

  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

inline std::size_t parameter_count(const ModelConfig& config) {
  return ParameterLayout(config).total();
}

/// Heap storage aligned for Eigen's widest packets, so that vectorized
/// reductions split identically wherever the buffer lands.
template <typename Scalar>
using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
struct ParameterSet {
  ModelConfig config;
  ParameterLayout layout;
  Buffer<Scalar> values;

  ParameterSet() = default;
  explicit ParameterSet(const ModelConfig& cfg)
      : config(cfg), layout(cfg), values(layout.total(), Scalar(0)) {}

  [[nodiscard]] std::size_t size() const { return values.size(); }
  void set_zero() { std::fill(values.begin(), values.end(), Scalar(0)); }

  template <typename Other>
  [[nodiscard]] ParameterSet<Other> cast() const {
    ParameterSet<Other> out(config);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<Other>(values[i]);
    return out;
  }
};

/// GPT-2 initialization: N(0, 0.02) for every weight matrix and the position
/// table, zero biases, unit layer-norm gains.
template <typename Scalar>
ParameterSet<Scalar> init_params(const ModelConfig& config, Rng& rng) {
  ParameterSet<Scalar> params(config);
  for (const auto& t : params.layout.tensors()) {
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias");
    for (std::size_t i = 0; i < t.size(); ++i) {
      double v = 0.0;
      if (is_gain) {
        v = 1.0;
      } else if (!is_bias) {
        v = 0.02 * rng.normal();
      }
      params.values[t.offset + i] = static_cast<Scalar>(v);
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Token streams

template <typename Scalar>
using TokenMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Tokens for a prompt: x_1, (y_1, 0), ..., x_k, (y_k, 0), query_x.
template <typename Scalar>
TokenMatrix<Scalar> encode_prompt(const PromptSequence& prompt) {
  TokenMatrix<Scalar> tokens(static_cast<Eigen::Index>(prompt.token_count()), 2);
  Eigen::Index r = 0;
  for (const auto& ex : prompt.context) {
    tokens(r, 0) = static_cast<Scalar>(ex.x[0]);
    tokens(r, 1) = static_cast<Scalar>(ex.x[1]);
    ++r;
    tokens(r, 0) = static_cast<Scalar>(ex.y);
    tokens(r, 1) = Scalar(0);
    ++r;
  }
  tokens(r, 0) = static_cast<Scalar>(prompt.query_x[0]);
  tokens(r, 1) = static_cast<Scalar>(prompt.query_x[1]);
  return tokens;
}

/// Tokens for a training sequence of k full pairs (2k tokens, no query).
template <typename Scalar>
TokenMatrix<Scalar> encode_examples(std::span<const Example> examples) {
  TokenMatrix<Scalar> tokens(static_cast<Eigen::Index>(2 * examples.size()), 2);
  Eigen::Index r = 0;
  for (const auto& ex : examples) {
    tokens(r, 0) = static_cast<Scalar>(ex.x[0]);
    tokens(r, 1) = static_cast<Scalar>(ex.x[1]);
    ++r;
    tokens(r, 0) = static_cast<Scalar>(ex.y);
    tokens(r, 1) = Scalar(0);
    ++r;
  }
  return tokens;
}

/// One training/validation sequence: tokens plus a target for every x-token.
template <typename Scalar>
struct LabeledSequence {
  TokenMatrix<Scalar> tokens;
  Buffer<Scalar> targets;
};

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
Eigen::Map<const Mat<Scalar>> cmat(const Buffer<Scalar>& v, std::size_t off, std::size_t rows,
                                   std::size_t cols) {
  return {v.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <typename Scalar>
Eigen::Map<Mat<Scalar>> mmat(Buffer<Scalar>& v, std::size_t off, std::size_t rows,
                             std::size_t cols) {
  return {v.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <typename Scalar>
Eigen::Map<const RowVec<Scalar>> cvec(const Buffer<Scalar>& v, std::size_t off,
                                      std::size_t n) {
  return {v.data() + off, static_cast<Eigen::Index>(n)};
}
template <typename Scalar>
Eigen::Map<RowVec<Scalar>> mvec(Buffer<Scalar>& v, std::size_t off, std::size_t n) {
  return {v.data() + off, static_cast<Eigen::Index>(n)};
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> xhat;
  ColVec<Scalar> rstd;
  Mat<Scalar> out;
};

template <typename Scalar, typename In>
void layer_norm_forward(const In& x, const Eigen::Map<const RowVec<Scalar>>& gain,
                        const Eigen::Map<const RowVec<Scalar>>& bias, LayerNormCache<Scalar>& c) {
  const auto n = x.rows();
  const auto e = x.cols();
  c.xhat.resize(n, e);
  c.rstd.resize(n);
  c.out.resize(n, e);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mean = x.row(i).mean();
    c.xhat.row(i) = x.row(i).array() - mean;
    const Scalar var = c.xhat.row(i).squaredNorm() / static_cast<Scalar>(e);
    const Scalar rstd = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    c.rstd(i) = rstd;
    c.xhat.row(i) *= rstd;
    c.out.row(i) = c.xhat.row(i).cwiseProduct(gain) + bias;
  }
}

/// Accumulates gain/bias gradients and returns dL/dx through `dx`.
template <typename Scalar>
void layer_norm_backward(const Mat<Scalar>& dy, const LayerNormCache<Scalar>& c,
                         const Eigen::Map<const RowVec<Scalar>>& gain,
                         Eigen::Map<RowVec<Scalar>> dgain, Eigen::Map<RowVec<Scalar>> dbias,
                         Mat<Scalar>& dx) {
  const auto n = dy.rows();
  const auto e = dy.cols();
  dx.resize(n, e);
  dgain += dy.cwiseProduct(c.xhat).colwise().sum();
  dbias += dy.colwise().sum();
  const Scalar inv_e = Scalar(1) / static_cast<Scalar>(e);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVec<Scalar> dxhat = dy.row(i).cwiseProduct(gain);
    const Scalar mean_d = dxhat.sum() * inv_e;
    const Scalar mean_dx = dxhat.dot(c.xhat.row(i)) * inv_e;
    dx.row(i) = c.rstd(i) * (dxhat.array() - mean_d - c.xhat.row(i).array() * mean_dx).matrix();
  }
}

template <typename Scalar>
Scalar gelu_coeff() {
  return static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
}

template <typename Scalar>
struct BlockCache {
  Mat<Scalar> input;  // residual stream entering the block
  LayerNormCache<Scalar> ln1;
  Mat<Scalar> qkv;
  std::vector<Mat<Scalar>> probs;  // per head, N x N, zero above diagonal
  Mat<Scalar> attn;                // concatenated head outputs
  Mat<Scalar> mid;                 // residual after attention
  LayerNormCache<Scalar> ln2;
  Mat<Scalar> pre_act;
  Mat<Scalar> act;
};

}  // namespace detail

/// Scratch space reused across sequences. Not shareable between threads.
template <typename Scalar>
struct Workspace {
  std::vector<detail::BlockCache<Scalar>> blocks;
  detail::Mat<Scalar> hidden;
  detail::LayerNormCache<Scalar> final_ln;
  detail::ColVec<Scalar> output;
  // backward scratch
  detail::Mat<Scalar> d_hidden, d_tmp, d_ln, d_attn, d_qkv, d_act, d_probs;
};

/// Runs the model over `tokens` and returns the read-out at every token
/// position. The read-out at x-token 2i is the prediction of y_i.
template <typename Scalar>
const detail::ColVec<Scalar>& forward_all(const ParameterSet<Scalar>& params,
                                          const TokenMatrix<Scalar>& tokens,
                                          Workspace<Scalar>& ws) {
  using namespace detail;
  const auto& cfg = params.config;
  const auto& lay = params.layout;
  const auto& v = params.values;
  const auto n = tokens.rows();
  if (n == 0) throw UsageError("empty token stream");
  if (static_cast<std::size_t>(n) > cfg.max_tokens) {
    throw UsageError("token stream of length " + std::to_string(n) + " exceeds max_tokens " +
                     std::to_string(cfg.max_tokens));
  }
  const std::size_t e = cfg.embed_dim;
  const std::size_t f = cfg.mlp_dim();
  const std::size_t heads = cfg.n_heads;
  const auto d = static_cast<Eigen::Index>(cfg.head_dim());
  const auto ei = static_cast<Eigen::Index>(e);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d));

  ws.blocks.resize(cfg.n_layers);
  ws.hidden.resize(n, ei);
  ws.hidden.noalias() = tokens * cmat(v, lay.read_in_weight, 2, e);
  ws.hidden.rowwise() += cvec(v, lay.read_in_bias, e);
  ws.hidden += cmat(v, lay.position, cfg.max_tokens, e).topRows(n);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& b = lay.blocks[l];
    auto& c = ws.blocks[l];
    c.input = ws.hidden;
    layer_norm_forward<Scalar>(c.input, cvec(v, b.ln1_gain, e), cvec(v, b.ln1_bias, e), c.ln1);

    c.qkv.resize(n, 3 * ei);
    c.qkv.noalias() = c.ln1.out * cmat(v, b.qkv_weight, e, 3 * e);
    c.qkv.rowwise() += cvec(v, b.qkv_bias, 3 * e);

    c.probs.resize(heads);
    c.attn.resize(n, ei);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto hd = static_cast<Eigen::Index>(h) * d;
      auto q = c.qkv.block(0, hd, n, d);
      auto k = c.qkv.block(0, ei + hd, n, d);
      auto val = c.qkv.block(0, 2 * ei + hd, n, d);
      auto& p = c.probs[h];
      p.resize(n, n);
      p.noalias() = q * k.transpose();
      for (Eigen::Index i = 0; i < n; ++i) {
        auto row = p.row(i).head(i + 1);
        row *= scale;
        const Scalar mx = row.maxCoeff();
        row = (row.array() - mx).exp().matrix();
        row /= row.sum();
        p.row(i).tail(n - i - 1).setZero();
      }
      c.attn.block(0, hd, n, d).noalias() = p * val;
    }

    c.mid = c.input;
    c.mid.noalias() += c.attn * cmat(v, b.attn_proj_weight, e, e);
    c.mid.rowwise() += cvec(v, b.attn_proj_bias, e);

    layer_norm_forward<Scalar>(c.mid, cvec(v, b.ln2_gain, e), cvec(v, b.ln2_bias, e), c.ln2);
    c.pre_act.resize(n, static_cast<Eigen::Index>(f));
    c.pre_act.noalias() = c.ln2.out * cmat(v, b.fc_weight, e, f);
    c.pre_act.rowwise() += cvec(v, b.fc_bias, f);
    {
      const Scalar k0 = gelu_coeff<Scalar>();
      const Scalar k1 = static_cast<Scalar>(0.044715);
      const auto z = c.pre_act.array();
      c.act = (Scalar(0.5) * z * (Scalar(1) + (k0 * (z + k1 * z * z * z)).tanh())).matrix();
    }

    ws.hidden = c.mid;
    ws.hidden.noalias() += c.act * cmat(v, b.mlp_proj_weight, f, e);
    ws.hidden.rowwise() += cvec(v, b.mlp_proj_bias, e);
  }

  layer_norm_forward<Scalar>(ws.hidden, cvec(v, lay.final_ln_gain, e),
                             cvec(v, lay.final_ln_bias, e), ws.final_ln);
  ws.output.resize(n);
  ws.output.noalias() = ws.final_ln.out * cmat(v, lay.read_out_weight, e, 1);
  ws.output.array() += v[lay.read_out_bias];
  return ws.output;
}

/// Predictions at every x-token (even positions), in order.
template <typename Scalar>
std::vector<Scalar> forward(const ParameterSet<Scalar>& params, const TokenMatrix<Scalar>& tokens,
                            Workspace<Scalar>& ws) {
  const auto& out = forward_all(params, tokens, ws);
  std::vector<Scalar> preds;
  preds.reserve(static_cast<std::size_t>((out.size() + 1) / 2));
  for (Eigen::Index i = 0; i < out.size(); i += 2) preds.push_back(out(i));
  return preds;
}

template <typename Scalar>
std::vector<Scalar> forward(const ParameterSet<Scalar>& params, const PromptSequence& prompt) {
  Workspace<Scalar> ws;
  return forward(params, encode_prompt<Scalar>(prompt), ws);
}

/// Model answer for the query point: the last prediction of forward().
template <typename Scalar>
Scalar predict_query(const ParameterSet<Scalar>& params, const PromptSequence& prompt,
                     Workspace<Scalar>& ws) {
  const auto& out = forward_all(params, encode_prompt<Scalar>(prompt), ws);
  return out(out.size() - 1);
}

template <typename Scalar>
Scalar predict_query(const ParameterSet<Scalar>& params, const PromptSequence& prompt) {
  Workspace<Scalar> ws;
  return predict_query(params, prompt, ws);
}

namespace detail {

/// Backpropagates d(output) through the cached forward pass of one sequence,
/// accumulating into `grads`.
template <typename Scalar>
void backward_sequence(const ParameterSet<Scalar>& params, const TokenMatrix<Scalar>& tokens,
                       const ColVec<Scalar>& d_output, Workspace<Scalar>& ws,
                       ParameterSet<Scalar>& grads) {
  const auto& cfg = params.config;
  const auto& lay = params.layout;
  const auto& v = params.values;
  auto& g = grads.values;
  const auto n = tokens.rows();
  const std::size_t e = cfg.embed_dim;
  const std::size_t f = cfg.mlp_dim();
  const auto ei = static_cast<Eigen::Index>(e);
  const auto d = static_cast<Eigen::Index>(cfg.head_dim());
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d));

  // read-out
  mmat(g, lay.read_out_weight, e, 1).noalias() += ws.final_ln.out.transpose() * d_output;
  g[lay.read_out_bias] += d_output.sum();
  ws.d_tmp.resize(n, ei);
  ws.d_tmp.noalias() = d_output * cmat(v, lay.read_out_weight, e, 1).transpose();
  layer_norm_backward<Scalar>(ws.d_tmp, ws.final_ln, cvec(v, lay.final_ln_gain, e),
                              mvec(g, lay.final_ln_gain, e), mvec(g, lay.final_ln_bias, e),
                              ws.d_hidden);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& b = lay.blocks[li];
    auto& c = ws.blocks[li];

    // MLP branch: hidden = mid + act W2 + b2
    mmat(g, b.mlp_proj_weight, f, e).noalias() += c.act.transpose() * ws.d_hidden;
    mvec(g, b.mlp_proj_bias, e) += ws.d_hidden.colwise().sum();
    ws.d_act.resize(n, static_cast<Eigen::Index>(f));
    ws.d_act.noalias() = ws.d_hidden * cmat(v, b.mlp_proj_weight, f, e).transpose();
    {
      const Scalar k0 = gelu_coeff<Scalar>();
      const Scalar k1 = static_cast<Scalar>(0.044715);
      const auto z = c.pre_act.array();
      const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t =
          (k0 * (z + k1 * z * z * z)).tanh();
      const auto dgelu = Scalar(0.5) * (Scalar(1) + t) +
                         Scalar(0.5) * z * (Scalar(1) - t * t) * k0 *
                             (Scalar(1) + Scalar(3) * k1 * z * z);
      ws.d_act.array() *= dgelu;
    }
    mmat(g, b.fc_weight, e, f).noalias() += c.ln2.out.transpose() * ws.d_act;
    mvec(g, b.fc_bias, f) += ws.d_act.colwise().sum();
    ws.d_tmp.noalias() = ws.d_act * cmat(v, b.fc_weight, e, f).transpose();
    layer_norm_backward<Scalar>(ws.d_tmp, c.ln2, cvec(v, b.ln2_gain, e), mvec(g, b.ln2_gain, e),
                                mvec(g, b.ln2_bias, e), ws.d_ln);
    ws.d_hidden += ws.d_ln;  // now dL/d(mid)

    // attention branch: mid = input + attn Wo + bo
    mmat(g, b.attn_proj_weight, e, e).noalias() += c.attn.transpose() * ws.d_hidden;
    mvec(g, b.attn_proj_bias, e) += ws.d_hidden.colwise().sum();
    ws.d_attn.resize(n, ei);
    ws.d_attn.noalias() = ws.d_hidden * cmat(v, b.attn_proj_weight, e, e).transpose();

    ws.d_qkv.resize(n, 3 * ei);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto hd = static_cast<Eigen::Index>(h) * d;
      auto q = c.qkv.block(0, hd, n, d);
      auto k = c.qkv.block(0, ei + hd, n, d);
      auto val = c.qkv.block(0, 2 * ei + hd, n, d);
      const auto& p = c.probs[h];
      auto d_out = ws.d_attn.block(0, hd, n, d);

      ws.d_qkv.block(0, 2 * ei + hd, n, d).noalias() = p.transpose() * d_out;
      ws.d_probs.resize(n, n);
      ws.d_probs.noalias() = d_out * val.transpose();
      // softmax backward, then fold in the 1/sqrt(d) score scale
      for (Eigen::Index i = 0; i < n; ++i) {
        auto dp = ws.d_probs.row(i).head(i + 1);
        const auto pr = p.row(i).head(i + 1);
        const Scalar dot = dp.dot(pr);
        dp = (pr.array() * (dp.array() - dot) * scale).matrix();
        ws.d_probs.row(i).tail(n - i - 1).setZero();
      }
      ws.d_qkv.block(0, hd, n, d).noalias() = ws.d_probs * k;
      ws.d_qkv.block(0, ei + hd, n, d).noalias() = ws.d_probs.transpose() * q;
    }
    mmat(g, b.qkv_weight, e, 3 * e).noalias() += c.ln1.out.transpose() * ws.d_qkv;
    mvec(g, b.qkv_bias, 3 * e) += ws.d_qkv.colwise().sum();
    ws.d_tmp.noalias() = ws.d_qkv * cmat(v, b.qkv_weight, e, 3 * e).transpose();
    layer_norm_backward<Scalar>(ws.d_tmp, c.ln1, cvec(v, b.ln1_gain, e), mvec(g, b.ln1_gain, e),
                                mvec(g, b.ln1_bias, e), ws.d_ln);
    ws.d_hidden += ws.d_ln;  // now dL/d(input)
  }

  mmat(g, lay.read_in_weight, 2, e).noalias() += tokens.transpose() * ws.d_hidden;
  mvec(g, lay.read_in_bias, e) += ws.d_hidden.colwise().sum();
  mmat(g, lay.position, cfg.max_tokens, e).topRows(n) += ws.d_hidden;
}

}  // namespace detail

/// Squared error averaged over every x-token of every sequence in the batch.
/// Gradients of that loss are written to `grads` (overwritten, not added).
template <typename Scalar>
double loss_and_gradients(const ParameterSet<Scalar>& params,
                          std::span<const LabeledSequence<Scalar>> batch,
                          ParameterSet<Scalar>& grads, Workspace<Scalar>& ws) {
  if (batch.empty()) throw UsageError("empty batch");
  const auto n = batch.front().tokens.rows();
  std::size_t positions = 0;
  for (const auto& seq : batch) {
    if (seq.tokens.rows() != n) throw UsageError("sequences in a batch must share token length");
    if (seq.targets.size() != static_cast<std::size_t>((n + 1) / 2)) {
      throw UsageError("one target per x-token is required");
    }
    positions += seq.targets.size();
  }
  if (grads.config != params.config) grads = ParameterSet<Scalar>(params.config);
  grads.set_zero();

  const Scalar inv = Scalar(1) / static_cast<Scalar>(positions);
  double loss = 0.0;
  detail::ColVec<Scalar> d_output(n);
  for (const auto& seq : batch) {
    const auto& out = forward_all(params, seq.tokens, ws);
    d_output.setZero();
    for (std::size_t i = 0; i < seq.targets.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(2 * i);
      const Scalar err = out(row) - seq.targets[i];
      loss += static_cast<double>(err) * static_cast<double>(err);
      d_output(row) = Scalar(2) * err * inv;
    }
    detail::backward_sequence(params, seq.tokens, d_output, ws, grads);
  }
  return loss / static_cast<double>(positions);
}

template <typename Scalar>
struct LossAndGradients {
  double loss = 0.0;
  ParameterSet<Scalar> gradients;
};

template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const ParameterSet<Scalar>& params,
                                            std::span<const LabeledSequence<Scalar>> batch) {
  LossAndGradients<Scalar> result{0.0, ParameterSet<Scalar>(params.config)};
  Workspace<Scalar> ws;
  result.loss = loss_and_gradients(params, batch, result.gradients, ws);
  return result;
}

/// Loss only, same averaging as loss_and_gradients.
template <typename Scalar>
double batch_loss(const ParameterSet<Scalar>& params,
                  std::span<const LabeledSequence<Scalar>> batch, Workspace<Scalar>& ws) {
  double loss = 0.0;
  std::size_t positions = 0;
  for (const auto& seq : batch) {
    const auto& out = forward_all(params, seq.tokens, ws);
    for (std::size_t i = 0; i < seq.targets.size(); ++i) {
      const double err = static_cast<double>(out(static_cast<Eigen::Index>(2 * i))) -
                         static_cast<double>(seq.targets[i]);
      loss += err * err;
    }
    positions += seq.targets.size();
  }
  return loss / static_cast<double>(positions);
}

}  // namespace stickylab
