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
#include <span>
#include <vector>

#include "cellcircuit/tensor.hpp"

namespace cellcircuit {

// Sparse dictionary mapping an MLP input x (d_model) to its output:
//   z = ReLU(W_enc x + b_enc),  x_hat = W_dec z + b_dec.
// Rows of W_enc are encoder feature vectors, columns of W_dec are decoder
// feature vectors. Parameters live in one flat buffer in the order
// w_enc [hidden, d_model], b_enc [hidden], w_dec [d_model, hidden],
// b_dec [d_model].
template <typename T>
class Transcoder {
 public:
  Transcoder() = default;
  Transcoder(int layer, int d_model, int hidden);

  // W_enc rows uniform on the sphere scaled by 1/sqrt(d_model), b_enc = 0,
  // W_dec = W_enc^T with unit-normalized columns, b_dec = 0.
  static Transcoder Initialized(int layer, int d_model, int hidden, uint64_t seed);

  int layer() const { return layer_; }
  int d_model() const { return d_model_; }
  int hidden() const { return hidden_; }

  const std::vector<TensorSpec>& specs() const { return specs_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  ConstMatMap<T> w_enc() const { return {params_.data(), hidden_, d_model_}; }
  ConstRowMap<T> b_enc() const { return {params_.data() + hidden_ * d_model_, hidden_}; }
  ConstMatMap<T> w_dec() const { return {params_.data() + DecOffset(), d_model_, hidden_}; }
  ConstRowMap<T> b_dec() const {
    return {params_.data() + DecOffset() + d_model_ * hidden_, d_model_};
  }
  MatMap<T> w_enc() { return {params_.data(), hidden_, d_model_}; }
  RowMap<T> b_enc() { return {params_.data() + hidden_ * d_model_, hidden_}; }
  MatMap<T> w_dec() { return {params_.data() + DecOffset(), d_model_, hidden_}; }
  RowMap<T> b_dec() { return {params_.data() + DecOffset() + d_model_ * hidden_, d_model_}; }

  // Rows of x are tokens.
  Mat<T> PreActivation(const Mat<T>& x) const;
  Mat<T> Encode(const Mat<T>& x) const;
  Mat<T> Decode(const Mat<T>& z) const;
  Mat<T> Reconstruct(const Mat<T>& x) const { return Decode(Encode(x)); }

  void NormalizeDecoderColumns();

  template <typename U>
  Transcoder<U> Cast() const {
    Transcoder<U> out(layer_, d_model_, hidden_);
    auto dst = out.params();
    for (size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

  bool operator==(const Transcoder& o) const {
    return layer_ == o.layer_ && d_model_ == o.d_model_ && hidden_ == o.hidden_ &&
           params_ == o.params_;
  }

 private:
  int DecOffset() const { return hidden_ * d_model_ + hidden_; }

  int layer_ = 0;
  int d_model_ = 0;
  int hidden_ = 0;
  std::vector<TensorSpec> specs_;
  std::vector<T> params_;
};

struct TranscoderLoss {
  double total = 0.0;
  double mse = 0.0;  // mean over tokens of ||x_hat - target||^2
  double l1 = 0.0;   // mean over tokens of ||z||_1
};

// Loss over a batch (rows of x/target are tokens). With target == x this is
// the plain sparse-autoencoder objective. Throws kNumeric on non-finite data.
template <typename T>
TranscoderLoss ComputeLoss(const Transcoder<T>& tc, const Mat<T>& x,
                           const Mat<T>& target, double lambda);

// Same loss, additionally writing d(loss)/d(params) into grad (same layout
// as tc.params(); overwritten).
template <typename T>
TranscoderLoss LossAndGradient(const Transcoder<T>& tc, const Mat<T>& x,
                               const Mat<T>& target, double lambda,
                               std::span<T> grad);

struct TranscoderTrainConfig {
  double max_lr = 1e-3;
  int tokens_per_batch = 512;
  double l1_coefficient = 1.4e-4;
  int expansion_factor = 8;
  long total_tokens = 200000;
  double warmup_frac = 0.05;
  uint64_t seed = 0;

  void Validate() const;
};

struct SparsityStats {
  std::vector<double> activation_prob;  // E(f) per feature
  double mean_l0 = 0.0;
  int dead_count = 0;
  long n_tokens = 0;

  // Features with log10 E(f) >= threshold (E(f) = 0 is never live).
  std::vector<int> LiveFeatures(double log10_threshold = -4.0) const;
};

struct TranscoderTrainResult {
  std::vector<double> loss_curve;  // total loss per step
  std::vector<double> mse_curve;
  SparsityStats stats;             // over the training inputs
};

// Adam with warmup-then-constant learning rate, decoder columns renormalized
// after every step. b_dec starts at the mean target of the first batch.
// max_lr = 0 leaves every parameter untouched.
TranscoderTrainResult TrainTranscoder(Transcoder<float>& tc, const Mat<float>& inputs,
                                      const Mat<float>& targets,
                                      const TranscoderTrainConfig& cfg);

template <typename T>
SparsityStats ComputeStats(const Transcoder<T>& tc, const Mat<T>& inputs);

std::string FormatStatsTable(const SparsityStats& stats);

}  // namespace cellcircuit
