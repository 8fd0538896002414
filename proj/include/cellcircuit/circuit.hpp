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

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cellcircuit/attribution.hpp"

namespace cellcircuit {

enum class PriorityMode {
  kMin,      // bottleneck: min(|edge|, parent priority)
  kProduct,  // parent * |edge| / |dst pre-activation|; heuristic
};

struct ExtractionParams {
  int top_k = 5;
  // Absolute |value| cutoff; when unset, relative_threshold * |target pre|.
  std::optional<double> threshold;
  double relative_threshold = 0.01;
  int max_depth = 6;
  int max_nodes = 100;
  PriorityMode priority = PriorityMode::kMin;

  void Validate() const;
  bool operator==(const ExtractionParams&) const = default;
};

// What a position of the traced prompt looks like.
struct TokenInfo {
  std::string text;
  std::string gene;  // gene symbol containing the token, or empty

  bool operator==(const TokenInfo&) const = default;
};

struct CircuitNode {
  FeatureNode node;
  double activation = 0.0;
  double priority = 0.0;  // key under which the node was first reached
  int depth = 0;          // hops from the target on that first route
  std::string token;
  bool gene_token = false;

  bool operator==(const CircuitNode&) const = default;
};

struct CircuitGraph {
  FeatureNode target;
  ExtractionParams params;  // threshold always resolved to an absolute value
  std::vector<CircuitNode> nodes;       // in insertion order, target first
  std::vector<AttributionEdge> edges;   // sorted by (dst, src, path, head)

  bool Contains(const FeatureNode& n) const;
  std::vector<FeatureNode> NodeSet() const;  // sorted
  bool operator==(const CircuitGraph&) const = default;
};

// Best-first expansion from target. Each expanded node keeps its top_k
// upstream edges with |value| >= threshold (zero edges never kept). A node
// joins the graph when first popped; the queue orders by priority
// (descending), hop count, then node. Bias, error and embedding nodes are
// leaves. A node already expanded is expanded again only when reached over
// a strictly shorter route, which can only extend reach under max_depth.
// Throws kInput if target is a feature with zero activation.
CircuitGraph ExtractCircuit(const AttributionContext& ctx, const FeatureNode& target,
                            const ExtractionParams& params,
                            std::span<const TokenInfo> tokens = {});

// Edges kept when expanding `node` under resolved params.
std::vector<AttributionEdge> KeptEdges(const AttributionContext& ctx, const FeatureNode& node,
                                       const ExtractionParams& resolved);

ExtractionParams ResolveParams(const AttributionContext& ctx, const FeatureNode& target,
                               const ExtractionParams& params);

struct CircuitPath {
  std::vector<FeatureNode> nodes;  // target first
  double priority = 0.0;
};

// Every path of at most max_depth kept edges ending at target, ranked by
// priority (descending), length, then node sequence. Small instances only:
// at most 3 layers, 16 features per layer, 8 tokens; else kGuard.
std::vector<CircuitPath> BruteForcePaths(const AttributionContext& ctx, const FeatureNode& target,
                                         const ExtractionParams& params);

// Node set implied by ranked paths: each node's best (priority, length)
// key, keeping the max_nodes best. Sorted.
std::vector<FeatureNode> PathNodeSet(std::span<const CircuitPath> paths, int max_nodes);

// Versioned line format; ExportText/ImportText round-trip exactly. ImportText
// skips leading lines starting with '#'.
std::string ExportText(const CircuitGraph& graph);
CircuitGraph ImportText(std::string_view text);

// Graphviz rendering, upstream at the bottom.
std::string ExportDot(const CircuitGraph& graph);

std::string NodeLabel(const FeatureNode& node);

}  // namespace cellcircuit
