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

#include "cellcircuit/transcoder.hpp"

#include <cmath>
#include <numeric>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"
#include "cellcircuit/optim.hpp"
#include "cellcircuit/rng.hpp"

namespace cellcircuit {

template <typename T>
Transcoder<T>::Transcoder(int layer, int d_model, int hidden)
    : layer_(layer), d_model_(d_model), hidden_(hidden) {
  if (d_model < 1 || hidden <= d_model)
    Fail(ErrorKind::kConfig, "transcoder hidden size must exceed d_model");
  size_t total = 0;
  AddTensor(specs_, total, "w_enc", {hidden, d_model});
  AddTensor(specs_, total, "b_enc", {hidden});
  AddTensor(specs_, total, "w_dec", {d_model, hidden});
  AddTensor(specs_, total, "b_dec", {d_model});
  params_.assign(total, T(0));
}

template <typename T>
Transcoder<T> Transcoder<T>::Initialized(int layer, int d_model, int hidden,
                                         uint64_t seed) {
  Transcoder tc(layer, d_model, hidden);
  Rng rng(seed);
  auto enc = tc.w_enc();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (int i = 0; i < hidden; ++i) {
    std::vector<double> v(d_model);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : v) {
        x = rng.Normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (int j = 0; j < d_model; ++j) enc(i, j) = static_cast<T>(v[j] / norm * scale);
  }
  tc.w_dec() = tc.w_enc().transpose();
  tc.NormalizeDecoderColumns();
  return tc;
}

template <typename T>
Mat<T> Transcoder<T>::PreActivation(const Mat<T>& x) const {
  Mat<T> pre = x * w_enc().transpose();
  pre.rowwise() += b_enc();
  return pre;
}

template <typename T>
Mat<T> Transcoder<T>::Encode(const Mat<T>& x) const {
  return PreActivation(x).cwiseMax(T(0));
}

template <typename T>
Mat<T> Transcoder<T>::Decode(const Mat<T>& z) const {
  Mat<T> out = z * w_dec().transpose();
  out.rowwise() += b_dec();
  return out;
}

template <typename T>
void Transcoder<T>::NormalizeDecoderColumns() {
  auto dec = w_dec();
  for (int i = 0; i < hidden_; ++i) {
    double norm = 0.0;
    for (int r = 0; r < d_model_; ++r) norm += static_cast<double>(dec(r, i)) * dec(r, i);
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (int r = 0; r < d_model_; ++r) dec(r, i) = static_cast<T>(dec(r, i) / norm);
    }
  }
}

namespace {

template <typename T>
void CheckShapes(const Transcoder<T>& tc, const Mat<T>& x, const Mat<T>& target) {
  if (x.cols() != tc.d_model() || target.cols() != tc.d_model() ||
      x.rows() != target.rows() || x.rows() == 0)
    Fail(ErrorKind::kInput, "transcoder batch shape mismatch");
  if (!x.allFinite() || !target.allFinite())
    Fail(ErrorKind::kNumeric, "non-finite activations in transcoder batch");
}

}  // namespace

template <typename T>
TranscoderLoss ComputeLoss(const Transcoder<T>& tc, const Mat<T>& x,
                           const Mat<T>& target, double lambda) {
  CheckShapes(tc, x, target);
  const Mat<T> z = tc.Encode(x);
  const Mat<T> resid = tc.Decode(z) - target;
  const double n = static_cast<double>(x.rows());
  TranscoderLoss loss;
  loss.mse = static_cast<double>(resid.squaredNorm()) / n;
  loss.l1 = static_cast<double>(z.sum()) / n;
  loss.total = loss.mse + lambda * loss.l1;
  return loss;
}

template <typename T>
TranscoderLoss LossAndGradient(const Transcoder<T>& tc, const Mat<T>& x,
                               const Mat<T>& target, double lambda,
                               std::span<T> grad) {
  CheckShapes(tc, x, target);
  if (grad.size() != tc.params().size()) Fail(ErrorKind::kInput, "gradient buffer size mismatch");
  const int h = tc.hidden(), d = tc.d_model();
  const Mat<T> pre = tc.PreActivation(x);
  const Mat<T> z = pre.cwiseMax(T(0));
  const Mat<T> resid = tc.Decode(z) - target;
  const T inv_n = T(1) / static_cast<T>(x.rows());

  TranscoderLoss loss;
  loss.mse = static_cast<double>(resid.squaredNorm()) * static_cast<double>(inv_n);
  loss.l1 = static_cast<double>(z.sum()) * static_cast<double>(inv_n);
  loss.total = loss.mse + lambda * loss.l1;

  const Mat<T> d_out = resid * (T(2) * inv_n);
  Mat<T> d_pre = d_out * tc.w_dec();
  d_pre.array() += static_cast<T>(lambda) * inv_n;
  d_pre = d_pre.cwiseProduct((pre.array() > T(0)).template cast<T>().matrix());

  T* g = grad.data();
  MatMap<T>(g, h, d) = d_pre.transpose() * x;
  RowMap<T>(g + h * d, h) = d_pre.colwise().sum();
  MatMap<T>(g + h * d + h, d, h) = d_out.transpose() * z;
  RowMap<T>(g + 2 * h * d + h, d) = d_out.colwise().sum();
  return loss;
}

void TranscoderTrainConfig::Validate() const {
  if (!(max_lr >= 0.0) || tokens_per_batch < 1 || !(l1_coefficient >= 0.0) ||
      expansion_factor < 2 || total_tokens < 1 || !(warmup_frac >= 0.0 && warmup_frac < 1.0))
    Fail(ErrorKind::kConfig, "invalid transcoder training config");
}

TranscoderTrainResult TrainTranscoder(Transcoder<float>& tc, const Mat<float>& inputs,
                                      const Mat<float>& targets,
                                      const TranscoderTrainConfig& cfg) {
  cfg.Validate();
  if (inputs.rows() == 0) Fail(ErrorKind::kInput, "empty activation stream");
  if (inputs.rows() != targets.rows() || inputs.cols() != tc.d_model() ||
      targets.cols() != tc.d_model())
    Fail(ErrorKind::kInput, "activation stream shape mismatch");

  const long n = inputs.rows();
  const long batch = std::min<long>(cfg.tokens_per_batch, n);
  const long steps = std::max<long>(1, cfg.total_tokens / batch);
  Rng rng(cfg.seed);
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  rng.Shuffle(order.begin(), order.end());
  long cursor = 0;

  Adam<float> adam(tc.params().size());
  std::vector<float> grad(tc.params().size());
  Mat<float> xb(batch, tc.d_model()), yb(batch, tc.d_model());
  TranscoderTrainResult result;

  for (long step = 0; step < steps; ++step) {
    for (long r = 0; r < batch; ++r) {
      if (cursor == n) {
        rng.Shuffle(order.begin(), order.end());
        cursor = 0;
      }
      const long idx = order[cursor++];
      xb.row(r) = inputs.row(idx);
      yb.row(r) = targets.row(idx);
    }
    if (step == 0 && cfg.max_lr > 0.0) tc.b_dec() = yb.colwise().mean();

    const auto loss = LossAndGradient<float>(tc, xb, yb, cfg.l1_coefficient, grad);
    if (!std::isfinite(loss.total))
      Fail(ErrorKind::kTraining, "transcoder loss is not finite at step " + std::to_string(step));
    result.loss_curve.push_back(loss.total);
    result.mse_curve.push_back(loss.mse);
    const double lr = WarmupConstantLr(cfg.max_lr, step, steps, cfg.warmup_frac);
    if (lr > 0.0) {
      adam.Step(tc.params(), grad, lr);
      tc.NormalizeDecoderColumns();
    }
  }
  result.stats = ComputeStats(tc, inputs);
  return result;
}

template <typename T>
SparsityStats ComputeStats(const Transcoder<T>& tc, const Mat<T>& inputs) {
  SparsityStats s;
  s.activation_prob.assign(tc.hidden(), 0.0);
  s.n_tokens = inputs.rows();
  if (inputs.rows() == 0) return s;
  std::vector<long> counts(tc.hidden(), 0);
  long active_total = 0;
  constexpr long kChunk = 4096;
  for (long start = 0; start < inputs.rows(); start += kChunk) {
    const long len = std::min<long>(kChunk, inputs.rows() - start);
    const Mat<T> pre = tc.PreActivation(inputs.middleRows(start, len));
    for (long r = 0; r < len; ++r) {
      for (int f = 0; f < tc.hidden(); ++f) {
        if (pre(r, f) > T(0)) {
          ++counts[f];
          ++active_total;
        }
      }
    }
  }
  const double n = static_cast<double>(inputs.rows());
  for (int f = 0; f < tc.hidden(); ++f) {
    s.activation_prob[f] = static_cast<double>(counts[f]) / n;
    if (counts[f] == 0) ++s.dead_count;
  }
  s.mean_l0 = static_cast<double>(active_total) / n;
  return s;
}

std::vector<int> SparsityStats::LiveFeatures(double log10_threshold) const {
  std::vector<int> live;
  for (size_t f = 0; f < activation_prob.size(); ++f) {
    const double p = activation_prob[f];
    if (p > 0.0 && std::log10(p) >= log10_threshold) live.push_back(static_cast<int>(f));
  }
  return live;
}

std::string FormatStatsTable(const SparsityStats& stats) {
  std::string out = "feature\tE_f\tlog10_E_f\n";
  for (size_t f = 0; f < stats.activation_prob.size(); ++f) {
    const double p = stats.activation_prob[f];
    out += std::to_string(f) + '\t' + FormatDouble(p) + '\t' +
           (p > 0.0 ? FormatDouble(std::log10(p)) : std::string("-inf")) + '\n';
  }
  return out;
}

template class Transcoder<float>;
template class Transcoder<double>;
template TranscoderLoss ComputeLoss(const Transcoder<float>&, const Mat<float>&,
                                    const Mat<float>&, double);
template TranscoderLoss ComputeLoss(const Transcoder<double>&, const Mat<double>&,
                                    const Mat<double>&, double);
template TranscoderLoss LossAndGradient(const Transcoder<float>&, const Mat<float>&,
                                        const Mat<float>&, double, std::span<float>);
template TranscoderLoss LossAndGradient(const Transcoder<double>&, const Mat<double>&,
                                        const Mat<double>&, double, std::span<double>);
template SparsityStats ComputeStats(const Transcoder<float>&, const Mat<float>&);
template SparsityStats ComputeStats(const Transcoder<double>&, const Mat<double>&);

}  // namespace cellcircuit
