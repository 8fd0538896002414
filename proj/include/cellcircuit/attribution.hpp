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

#include <compare>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cellcircuit/model.hpp"
#include "cellcircuit/transcoder.hpp"

namespace cellcircuit {

enum class NodeKind { kEmbedding, kFeature, kBias, kError, kLogit };

// A node of the attribution graph.
//   kFeature:   layer l, index = transcoder feature
//   kEmbedding: layer -1, index = token id (token + position embedding)
//   kBias:      layer l, constants written by block l (decoder bias plus the
//               LayerNorm shift carried through attention), index -1;
//               at the destination's own layer it holds the shift of the
//               LayerNorm the destination reads through
//   kError:     layer l, true MLP output minus transcoder reconstruction
//   kLogit:     layer n_layers, index = vocabulary id
struct FeatureNode {
  NodeKind kind = NodeKind::kFeature;
  int layer = 0;
  int index = 0;
  int position = 0;

  static FeatureNode Feature(int layer, int index, int position) {
    return {NodeKind::kFeature, layer, index, position};
  }
  static FeatureNode Embedding(int token, int position) {
    return {NodeKind::kEmbedding, -1, token, position};
  }
  static FeatureNode Bias(int layer, int position) { return {NodeKind::kBias, layer, -1, position}; }
  static FeatureNode Error(int layer, int position) { return {NodeKind::kError, layer, -1, position}; }
  static FeatureNode Logit(int n_layers, int token, int position) {
    return {NodeKind::kLogit, n_layers, token, position};
  }

  // Only features and logits have upstream contributions.
  bool expandable() const { return kind == NodeKind::kFeature || kind == NodeKind::kLogit; }

  // Stable text id, e.g. "F:2:117@14", "E:301@3", "B:1@14", "R:0@2", "L:4:330@27".
  std::string Id() const;
  static FeatureNode Parse(std::string_view id);

  // Tie-break order: layer, token position, index, kind.
  auto operator<=>(const FeatureNode& o) const {
    if (auto c = layer <=> o.layer; c != 0) return c;
    if (auto c = position <=> o.position; c != 0) return c;
    if (auto c = index <=> o.index; c != 0) return c;
    return kind <=> o.kind;
  }
  bool operator==(const FeatureNode&) const = default;
};

const char* NodeKindName(NodeKind kind);

enum class PathKind {
  kSameToken,  // feature read by the destination at the same token
  kDirect,     // embedding / bias / error read at the same token
  kAttention,  // first routed through attention head (head_layer, head)
};

const char* PathKindName(PathKind kind);

struct AttributionEdge {
  FeatureNode src;
  FeatureNode dst;
  double value = 0.0;
  PathKind path = PathKind::kDirect;
  int head_layer = -1;
  int head = -1;

  bool operator==(const AttributionEdge&) const = default;
};

// Linear part of a frozen LayerNorm: v -> scale * (v - mean(v)) when
// centered, else scale * v.
struct AffineFold {
  RowVec<double> scale;
  bool centered = false;

  static AffineFold Identity(int d) { return {RowVec<double>::Ones(d), false}; }
  RowVec<double> Apply(const RowVec<double>& v) const;
  RowVec<double> ApplyTransposed(const RowVec<double>& c) const;
};

// f_dec^(src_layer, i) . A^T f_enc^(dst_layer, j) with A the fold's linear
// part; the plain decoder/encoder dot product under the identity fold.
// Throws kInput unless src layer < dst layer.
double ConnectionWeight(const Transcoder<double>& src, int i, const Transcoder<double>& dst,
                        int j, const AffineFold& fold);

// Read-only view over one captured forward pass plus the weights that
// produced it. Attention patterns and LayerNorm scales are frozen at their
// captured values, so every node's pre-activation is an exact sum of
// upstream contributions.
class AttributionContext {
 public:
  AttributionContext(const Model<double>& model, std::span<const Transcoder<double>> transcoders,
                     const TraceSession& session);

  const Model<double>& model() const { return *model_; }
  const TraceSession& session() const { return *session_; }
  const Transcoder<double>& transcoder(int layer) const { return transcoders_[layer]; }
  int n_layers() const { return model_->config().n_layers; }
  int n_tokens() const { return session_->n_tokens(); }

  // Feature: transcoder pre-activation; logit: the logit itself.
  double PreActivation(const FeatureNode& node) const;
  // Feature: z = max(0, pre); logit: the logit; other kinds: 0.
  double Activation(const FeatureNode& node) const;
  // Constant not attributed to any edge (b_enc for features, 0 for logits).
  double EncoderBias(const FeatureNode& node) const;

  // Vector a source node writes into the residual stream.
  RowVec<double> SourceVector(const FeatureNode& node) const;

  // Frozen LN2 fold of `layer` at `position`.
  AffineFold Ln2Fold(int layer, int position) const;
  AffineFold Ln1Fold(int layer, int position) const;

  // W_V^(layer,head) W_O^(layer,head), d_model x d_model.
  const Mat<double>& Ovc(int layer, int head) const { return ov_[layer][head]; }

  void CheckNode(const FeatureNode& node) const;

 private:
  const Model<double>* model_;
  std::span<const Transcoder<double>> transcoders_;
  const TraceSession* session_;
  std::vector<std::vector<Mat<double>>> ov_;
  std::vector<RowVec<double>> attn_shift_;  // LN1 shift carried through all heads

  friend std::vector<AttributionEdge> DecomposeNode(const AttributionContext&, const FeatureNode&);
};

// Same-token edge: z_src * ConnectionWeight under the
// destination's LN2 fold at the shared token.
AttributionEdge SameTokenAttribution(const AttributionContext& ctx, const FeatureNode& src,
                                     const FeatureNode& dst);

// Single hop through head (head_layer, head): source vector at position s,
// LN1 fold at s, OV circuit, attention weight a(t, s), destination LN2 fold
// at t, dotted with the destination encoder row. Any source kind.
AttributionEdge AttentionPathAttribution(const AttributionContext& ctx, const FeatureNode& src,
                                         int head_layer, int head, const FeatureNode& dst);

// Every upstream contribution to a feature or logit node. Attention edges
// carry the full effect entering through that head (including later
// hops). Completeness: sum of values + EncoderBias == PreActivation.
std::vector<AttributionEdge> DecomposeNode(const AttributionContext& ctx, const FeatureNode& dst);

std::vector<AttributionEdge> DecomposeFeature(const AttributionContext& ctx,
                                              const FeatureNode& dst);

std::vector<AttributionEdge> LogitAttribution(const AttributionContext& ctx, int token_id,
                                              int position);

// PreActivation - EncoderBias - sum(edges).
double CompletenessResidual(const AttributionContext& ctx, const FeatureNode& dst,
                            std::span<const AttributionEdge> edges);

// Sum of edge values grouped by source node, sorted by |value| descending.
std::vector<std::pair<FeatureNode, double>> TotalsBySource(std::span<const AttributionEdge> edges);

}  // namespace cellcircuit
