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

#include <span>
#include <string>
#include <vector>

#include "cellcircuit/model.hpp"
#include "cellcircuit/tokenizer.hpp"
#include "cellcircuit/transcoder.hpp"

namespace cellcircuit {

// Per-token means over every next-token target of the validation set.
struct ModeComparison {
  double loss_original = 0.0;
  double loss_replaced = 0.0;
  double loss_ablated = 0.0;
  double kl_replaced = 0.0;  // KL(original || transcoder-replaced)
  double kl_ablated = 0.0;   // KL(original || MLP-ablated)
  long n_tokens = 0;
};

// KL(p || q) for the softmax distributions of two logit rows.
double SoftmaxKl(const RowVec<double>& p_logits, const RowVec<double>& q_logits);

// Throws kState unless there is one transcoder per layer.
template <typename T>
ModeComparison CompareModes(const Model<T>& model, std::span<const Transcoder<T>> transcoders,
                            const std::vector<std::vector<int>>& sequences);

// Three val_loss rows, then two kl rows.
std::string FormatModeTable(const ModeComparison& c);

// MLP inputs and outputs of one layer in the original model, one row per
// token over all sequences.
struct MlpData {
  Mat<float> inputs;
  Mat<float> targets;
};

template <typename T>
std::vector<MlpData> CollectMlpData(const Model<T>& model,
                                    const std::vector<std::vector<int>>& sequences);

template <typename T>
std::vector<double> L0ByLayer(std::span<const Transcoder<T>> transcoders,
                              std::span<const MlpData> data);

std::string FormatL0Table(std::span<const double> l0);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  int count = 0;
};

struct LiveHistogram {
  std::vector<HistogramBin> bins;  // contiguous, width 0.25 in log10 E(f)
  int live_count = 0;              // log10 E(f) >= threshold
  int dead_count = 0;              // E(f) == 0, not binned
  double threshold = -4.0;
};

LiveHistogram LiveFeatureHistogram(const SparsityStats& stats, double threshold = -4.0,
                                   double bin_width = 0.25);

std::string FormatHistogram(const LiveHistogram& h);

struct FeatureContext {
  int sentence = 0;
  int position = 0;
  std::string token;
  std::string window;  // up to 10 tokens either side, token marked [[...]]
  double activation = 0.0;
  std::string gene;    // gene symbol containing the token, or empty

  bool operator==(const FeatureContext&) const = default;
};

struct FeatureReport {
  int layer = 0;
  int feature = 0;
  double log10_ef = 0.0;  // -inf for a dead feature
  long n_tokens = 0;
  std::vector<FeatureContext> contexts;  // activation descending, all > 0

  bool operator==(const FeatureReport&) const = default;
};

// Scans sentences through the original model, one forward pass per
// sentence, and builds a report for each requested feature of `layer`.
template <typename T>
std::vector<FeatureReport> FeatureReports(const Model<T>& model, const Transcoder<T>& tc,
                                          const Vocab& vocab,
                                          std::span<const std::string> sentences,
                                          std::span<const int> features, int top_m,
                                          int window = 10);

std::string FormatFeatureReports(std::span<const FeatureReport> reports);

// Gene symbol whose byte span intersects each token's span (empty if none).
std::vector<std::string> TokenGenes(const Vocab& vocab, std::span<const int> ids);

}  // namespace cellcircuit
