// Copyright 2026 The cellcircuit Authors
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

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cellcircuit/tensor.hpp"
#include "cellcircuit/transcoder.hpp"

namespace cellcircuit {

class Vocab;

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_mlp = 256;
  int max_context = 96;
  uint64_t seed = 0;

  void Validate() const;
  int d_head() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct BlockOffsets {
  size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_in, b_in, w_out, b_out;
};

// Placement of every named tensor in the flat parameter buffer. Matrices
// are stored row-major with inputs on rows: y = x W for x a row vector.
struct ModelLayout {
  explicit ModelLayout(const ModelConfig& cfg);

  size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0, w_unembed = 0, total = 0;
  std::vector<BlockOffsets> blocks;
  std::vector<TensorSpec> specs;
};

// Typed Eigen views over a parameter-shaped buffer (weights or gradients).
template <typename S>
class ParamView {
  using T = std::remove_const_t<S>;
  using M = Eigen::Map<std::conditional_t<std::is_const_v<S>, const Mat<T>, Mat<T>>>;
  using V = Eigen::Map<std::conditional_t<std::is_const_v<S>, const RowVec<T>, RowVec<T>>>;

 public:
  ParamView(S* base, const ModelConfig& cfg, const ModelLayout& layout)
      : base_(base), cfg_(&cfg), layout_(&layout) {}

  M wte() const { return M(base_ + layout_->wte, cfg_->vocab_size, cfg_->d_model); }
  M wpe() const { return M(base_ + layout_->wpe, cfg_->max_context, cfg_->d_model); }
  V lnf_g() const { return V(base_ + layout_->lnf_g, cfg_->d_model); }
  V lnf_b() const { return V(base_ + layout_->lnf_b, cfg_->d_model); }
  M w_unembed() const { return M(base_ + layout_->w_unembed, cfg_->d_model, cfg_->vocab_size); }

  V ln1_g(int l) const { return Vec(b(l).ln1_g, cfg_->d_model); }
  V ln1_b(int l) const { return Vec(b(l).ln1_b, cfg_->d_model); }
  M wq(int l) const { return Sq(b(l).wq); }
  M wk(int l) const { return Sq(b(l).wk); }
  M wv(int l) const { return Sq(b(l).wv); }
  M wo(int l) const { return Sq(b(l).wo); }
  V ln2_g(int l) const { return Vec(b(l).ln2_g, cfg_->d_model); }
  V ln2_b(int l) const { return Vec(b(l).ln2_b, cfg_->d_model); }
  M w_in(int l) const { return M(base_ + b(l).w_in, cfg_->d_model, cfg_->d_mlp); }
  V b_in(int l) const { return Vec(b(l).b_in, cfg_->d_mlp); }
  M w_out(int l) const { return M(base_ + b(l).w_out, cfg_->d_mlp, cfg_->d_model); }
  V b_out(int l) const { return Vec(b(l).b_out, cfg_->d_model); }

 private:
  const BlockOffsets& b(int l) const { return layout_->blocks[l]; }
  V Vec(size_t off, int n) const { return V(base_ + off, n); }
  M Sq(size_t off) const { return M(base_ + off, cfg_->d_model, cfg_->d_model); }

  S* base_;
  const ModelConfig* cfg_;
  const ModelLayout* layout_;
};

// Decoder-only pre-LN transformer:
//   x <- x + Attn(LN1(x));  x <- x + MLP(LN2(x));  logits = LNf(x) W_U
// with learned absolute positions, GELU MLPs and no attention biases.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  // N(0, 0.02) weights (output projections scaled by 1/sqrt(2 n_layers)),
  // unit LN scales, zero biases; seeded from cfg.seed.
  static Model Initialized(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ModelLayout& layout() const { return layout_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  ParamView<const T> view() const { return {params_.data(), cfg_, layout_}; }
  ParamView<T> mutable_view() { return {params_.data(), cfg_, layout_}; }
  ParamView<T> grad_view(std::span<T> grad) const { return {grad.data(), cfg_, layout_}; }

  template <typename U>
  Model<U> Cast() const {
    Model<U> out(cfg_);
    auto dst = out.params();
    for (size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

  bool operator==(const Model& o) const { return cfg_ == o.cfg_ && params_ == o.params_; }

 private:
  ModelConfig cfg_;
  ModelLayout layout_;
  std::vector<T> params_;
};

enum class ModeKind { kOriginal, kTranscoderReplaced, kMlpAblated };

const char* ModeName(ModeKind kind);

// How each block's MLP output is produced. Transcoders may also accompany
// kOriginal, in which case their activations are recorded but unused.
template <typename T>
struct ExecutionMode {
  ModeKind kind = ModeKind::kOriginal;
  std::span<const Transcoder<T>> transcoders;

  static ExecutionMode Original(std::span<const Transcoder<T>> tcs = {}) {
    return {ModeKind::kOriginal, tcs};
  }
  static ExecutionMode MlpAblated() { return {ModeKind::kMlpAblated, {}}; }
  static ExecutionMode Replaced(std::span<const Transcoder<T>> tcs) {
    return {ModeKind::kTranscoderReplaced, tcs};
  }
};

template <typename T>
struct BlockCache {
  Mat<T> x_in;                  // residual stream entering the block
  ColVec<T> ln1_mean, ln1_rstd;
  Mat<T> h1;                    // LN1 output
  Mat<T> q, k, v;
  std::vector<Mat<T>> att;      // per head, [dst, src]
  Mat<T> y;                     // concatenated head outputs before W_O
  Mat<T> x_mid;                 // after the attention residual add
  ColVec<T> ln2_mean, ln2_rstd;
  Mat<T> h2;                    // MLP input
  Mat<T> pre, act;              // MLP hidden pre/post GELU
  Mat<T> true_mlp_out;          // original MLP output
  Mat<T> mlp_out;               // output actually added in this mode
  Mat<T> tc_pre;                // transcoder pre-activations, if any
};

template <typename T>
struct ForwardCache {
  std::vector<int> ids;
  ModeKind mode = ModeKind::kOriginal;
  Mat<T> x0;
  std::vector<BlockCache<T>> blocks;
  Mat<T> x_final;
  ColVec<T> lnf_mean, lnf_rstd;
  Mat<T> hf;
  Mat<T> logits;
};

// Per-token constants that turn a LayerNorm into an affine map for one
// input: LN(v) = gamma * rstd * (v - mean) + beta.
struct LnFold {
  std::vector<double> mean, rstd;
};

struct LayerCapture {
  Mat<double> resid_pre;
  Mat<double> resid_mid;
  LnFold ln1, ln2;
  std::vector<Mat<double>> attention;  // per head, [dst, src]
  Mat<double> mlp_in;
  Mat<double> mlp_out;
  Mat<double> true_mlp_out;
  Mat<double> tc_pre;  // empty when no transcoders were supplied
};

struct TraceSession {
  ModeKind mode = ModeKind::kOriginal;
  std::vector<int> ids;
  std::vector<LayerCapture> layers;
  Mat<double> resid_final;
  LnFold ln_final;
  Mat<double> logits;

  int n_tokens() const { return static_cast<int>(ids.size()); }
  bool has_transcoders() const { return !layers.empty() && layers[0].tc_pre.size() > 0; }
};

// Runs the model on ids (|ids| <= max_context, else kInput).
template <typename T>
ForwardCache<T> RunForward(const Model<T>& model, std::span<const int> ids,
                           const ExecutionMode<T>& mode);

template <typename T>
TraceSession CaptureSession(const ForwardCache<T>& cache);

struct ForwardOutput {
  Mat<double> logits;
  std::optional<TraceSession> trace;
};

template <typename T>
ForwardOutput Forward(const Model<T>& model, std::span<const int> ids,
                      const ExecutionMode<T>& mode, bool capture);

// Recomputes logits from a session's captured per-layer quantities.
Mat<double> ReplayLogits(const Model<double>& model, const TraceSession& session);

// Summed next-token cross-entropy over positions 0..n-2.
template <typename T>
double SequenceLoss(const Model<T>& model, std::span<const int> ids,
                    const ExecutionMode<T>& mode);

// Adds scale * d(summed cross-entropy)/d(params) into grad and returns the
// summed cross-entropy. Original mode only.
template <typename T>
double LossAndGradient(const Model<T>& model, std::span<const int> ids,
                       std::span<T> grad, T scale);

struct LmTrainConfig {
  double lr = 3e-3;
  int batch_tokens = 1024;
  long steps = 1000;
  double warmup_frac = 0.05;
  double min_lr_ratio = 0.1;
  double grad_clip = 1.0;
  uint64_t seed = 0;

  void Validate() const;
};

struct LmTrainResult {
  std::vector<double> loss_curve;  // mean per-token loss per step
};

// Adam (0.9, 0.999, 1e-8), warmup then cosine decay, global-norm clipping.
// Throws kTraining naming the step if the loss becomes non-finite.
LmTrainResult TrainLm(Model<float>& model, const std::vector<std::vector<int>>& sequences,
                      const LmTrainConfig& cfg,
                      const std::function<void(long, double)>& on_step = {});

// Greedy decoding after [BOS] + encode(prompt) until a newline token or
// max_new_tokens; returns the continuation with whitespace trimmed.
template <typename T>
std::string PredictCellType(const Model<T>& model, const Vocab& vocab,
                            std::string_view prompt, int max_new_tokens = 8);

// [BOS] followed by the encoding of text.
std::vector<int> EncodeWithBos(const Vocab& vocab, std::string_view text);

}  // namespace cellcircuit
