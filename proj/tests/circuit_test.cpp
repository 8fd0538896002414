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

#include "cellcircuit/circuit.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <set>

#include "cellcircuit/error.hpp"
#include "cellcircuit/rng.hpp"
#include "micro_model.hpp"

namespace cellcircuit {
namespace {

using testing_util::MicroConfig;
using testing_util::RandomModel;
using testing_util::RandomTranscoders;

struct Instance {
  Model<double> model;
  std::vector<Transcoder<double>> tcs;
  TraceSession session;
  std::vector<int> ids;

  Instance(int layers, int hidden, int n_tokens, uint64_t seed)
      : model(RandomModel(MicroConfig(layers, 2), seed, 0.5)),
        tcs(RandomTranscoders(MicroConfig(layers, 2), hidden, seed + 1)) {
    Rng rng(seed + 2);
    for (int t = 0; t < n_tokens; ++t) ids.push_back(static_cast<int>(rng.Below(11)));
    session = *Forward(model, ids, ExecutionMode<double>::Replaced(tcs), true).trace;
  }
  AttributionContext ctx() const { return {model, tcs, session}; }
};

// Recursive reachability over kept edges, written without a queue.
std::set<FeatureNode> Reachable(const AttributionContext& ctx, const FeatureNode& target,
                                const ExtractionParams& resolved) {
  std::set<FeatureNode> seen = {target};
  std::function<void(const FeatureNode&, int)> go = [&](const FeatureNode& n, int budget) {
    if (budget == 0 || !n.expandable()) return;
    for (const auto& e : KeptEdges(ctx, n, resolved)) {
      seen.insert(e.src);
      go(e.src, budget - 1);
    }
  };
  go(target, resolved.max_depth);
  return seen;
}

FeatureNode PickTarget(const AttributionContext& ctx, Rng& rng) {
  if (rng.Below(3) == 0)
    return FeatureNode::Logit(ctx.n_layers(), static_cast<int>(rng.Below(11)),
                              ctx.n_tokens() - 1);
  std::vector<FeatureNode> live;
  const int l = ctx.n_layers() - 1;
  for (int t = 0; t < ctx.n_tokens(); ++t)
    for (int i = 0; i < ctx.transcoder(l).hidden(); ++i)
      if (ctx.Activation(FeatureNode::Feature(l, i, t)) > 0) live.push_back({NodeKind::kFeature, l, i, t});
  return live[rng.Below(live.size())];
}

TEST(CircuitOracle, BestFirstNodeSetEqualsPathEnumerationOnRandomInstances) {
  Rng rng(2024);
  int instances = 0;
  for (int k = 0; k < 24; ++k) {
    const int layers = 2 + static_cast<int>(rng.Below(2));
    const Instance inst(layers, 9 + static_cast<int>(rng.Below(8)), 3 + static_cast<int>(rng.Below(6)),
                        1000 + k);
    const auto ctx = inst.ctx();
    const auto target = PickTarget(ctx, rng);
    ExtractionParams p;
    p.top_k = 1 + static_cast<int>(rng.Below(4));
    p.max_depth = 1 + static_cast<int>(rng.Below(4));
    p.relative_threshold = 0.02 * rng.Uniform();
    p.max_nodes = 100000;
    const auto g = ExtractCircuit(ctx, target, p);
    const auto paths = BruteForcePaths(ctx, target, p);
    const auto oracle = PathNodeSet(paths, p.max_nodes);
    EXPECT_EQ(g.NodeSet(), oracle) << "instance " << k;
    const auto reach = Reachable(ctx, target, g.params);
    EXPECT_EQ(std::vector<FeatureNode>(reach.begin(), reach.end()), oracle) << "instance " << k;

    // With the node cap binding, the oracle keeps the best-keyed nodes.
    p.max_nodes = 2 + static_cast<int>(rng.Below(std::max<size_t>(oracle.size(), 2)));
    EXPECT_EQ(ExtractCircuit(ctx, target, p).NodeSet(), PathNodeSet(paths, p.max_nodes))
        << "capped instance " << k;
    ++instances;
  }
  EXPECT_GE(instances, 20);
}

TEST(CircuitOracle, PathPrioritiesAreNonIncreasing) {
  const Instance inst(3, 12, 6, 7);
  const auto ctx = inst.ctx();
  ExtractionParams p;
  p.top_k = 3;
  p.max_depth = 3;
  const auto paths = BruteForcePaths(ctx, FeatureNode::Logit(3, 2, 5), p);
  ASSERT_GT(paths.size(), 5u);
  for (size_t i = 1; i < paths.size(); ++i) EXPECT_GE(paths[i - 1].priority, paths[i].priority);
}

TEST(CircuitOracle, LargeInstancesAreGuarded) {
  const Instance inst(2, 17, 4, 3);
  try {
    BruteForcePaths(inst.ctx(), FeatureNode::Logit(2, 1, 3), {});
    FAIL() << "expected a guard error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kGuard);
  }
}

TEST(Circuit, TopOneDepthOneIsTargetPlusStrongestContributor) {
  const Instance inst(2, 12, 5, 11);
  const auto ctx = inst.ctx();
  const auto target = FeatureNode::Logit(2, 4, 4);
  ExtractionParams p;
  p.top_k = 1;
  p.max_depth = 1;
  const auto g = ExtractCircuit(ctx, target, p);
  ASSERT_EQ(g.nodes.size(), 2u);
  ASSERT_EQ(g.edges.size(), 1u);
  double best = 0.0;
  for (const auto& e : DecomposeNode(ctx, target)) best = std::max(best, std::abs(e.value));
  EXPECT_EQ(std::abs(g.edges[0].value), best);
}

TEST(Circuit, ThresholdAboveEveryEdgeLeavesTargetAlone) {
  const Instance inst(2, 12, 5, 12);
  ExtractionParams p;
  p.threshold = 1e300;
  const auto g = ExtractCircuit(inst.ctx(), FeatureNode::Logit(2, 3, 4), p);
  EXPECT_EQ(g.nodes.size(), 1u);
  EXPECT_TRUE(g.edges.empty());
  const auto dot = ExportDot(g);
  EXPECT_NE(dot.find("Logit/3@4"), std::string::npos);
  EXPECT_EQ(dot.find("->"), std::string::npos);
}

TEST(Circuit, GraphIsBoundedDagReachingTarget) {
  const Instance inst(3, 16, 8, 13);
  const auto ctx = inst.ctx();
  ExtractionParams p;
  p.top_k = 4;
  p.max_depth = 4;
  p.max_nodes = 25;
  const auto target = FeatureNode::Logit(3, 5, 7);
  const auto g = ExtractCircuit(ctx, target, p);
  EXPECT_LE(static_cast<int>(g.nodes.size()), p.max_nodes);
  std::map<FeatureNode, std::vector<FeatureNode>> down;
  for (const auto& e : g.edges) {
    EXPECT_TRUE(g.Contains(e.src) && g.Contains(e.dst));
    // The destination's own LayerNorm shift sits in its own block.
    if (e.src.kind == NodeKind::kBias && e.src.layer == e.dst.layer)
      EXPECT_EQ(e.src.position, e.dst.position);
    else
      EXPECT_LT(e.src.layer, e.dst.layer);
    EXPECT_LE(e.src.position, e.dst.position);
    EXPECT_TRUE(std::isfinite(e.value));
    down[e.src].push_back(e.dst);
  }
  for (const auto& n : g.nodes) {
    EXPECT_LE(n.depth, p.max_depth);
    std::function<bool(const FeatureNode&)> reaches = [&](const FeatureNode& x) {
      if (x == target) return true;
      for (const auto& y : down[x]) if (reaches(y)) return true;
      return false;
    };
    EXPECT_TRUE(reaches(n.node)) << n.node.Id();
  }
}

TEST(Circuit, LargerBudgetsGiveNodeSupersets) {
  const Instance inst(3, 16, 7, 14);
  const auto ctx = inst.ctx();
  const auto target = FeatureNode::Logit(3, 1, 6);
  auto subset = [](const CircuitGraph& a, const CircuitGraph& b) {
    const auto x = a.NodeSet(), y = b.NodeSet();
    return std::includes(y.begin(), y.end(), x.begin(), x.end());
  };
  ExtractionParams base;
  base.top_k = 2;
  base.max_depth = 3;
  base.max_nodes = 100000;
  const auto g0 = ExtractCircuit(ctx, target, base);
  auto more_k = base;
  more_k.top_k = 4;
  auto lower_theta = base;
  lower_theta.relative_threshold = 0.001;
  EXPECT_TRUE(subset(g0, ExtractCircuit(ctx, target, more_k)));
  EXPECT_TRUE(subset(g0, ExtractCircuit(ctx, target, lower_theta)));
  auto small_n = more_k;
  small_n.max_nodes = 6;
  auto big_n = more_k;
  big_n.max_nodes = 12;
  EXPECT_TRUE(subset(ExtractCircuit(ctx, target, small_n), ExtractCircuit(ctx, target, big_n)));
}

TEST(Circuit, InactiveFeatureTargetIsAnInputError) {
  const Instance inst(2, 12, 4, 15);
  const auto ctx = inst.ctx();
  for (int i = 0; i < 12; ++i) {
    const auto f = FeatureNode::Feature(1, i, 3);
    if (ctx.Activation(f) > 0) continue;
    try {
      ExtractCircuit(ctx, f, {});
      FAIL() << "expected an error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kInput);
    }
    return;
  }
  GTEST_SKIP() << "every feature fired";
}

TEST(CircuitFormat, TextRoundTripIsExactAndDeterministic) {
  const Instance inst(3, 16, 8, 16);
  const auto ctx = inst.ctx();
  std::vector<TokenInfo> tokens;
  for (int t = 0; t < 8; ++t)
    tokens.push_back({t % 3 == 0 ? " V\tW\nF\\" : " x", t % 3 == 0 ? "VWF" : ""});
  ExtractionParams p;
  p.max_depth = 3;
  const auto g = ExtractCircuit(ctx, FeatureNode::Logit(3, 7, 7), p, tokens);
  ASSERT_GT(g.edges.size(), 3u);
  const auto text = ExportText(g);
  EXPECT_EQ(ImportText(text), g);
  EXPECT_EQ(ExportText(ImportText(text)), text);
  EXPECT_EQ(ExportText(ExtractCircuit(ctx, FeatureNode::Logit(3, 7, 7), p, tokens)), text);

  const auto dot = ExportDot(g);
  EXPECT_NE(dot.find("gene_token=true"), std::string::npos);
  for (const auto& e : g.edges) {
    char label[64];
    std::snprintf(label, sizeof(label), "[label=\"%.3f\"", e.value);
    EXPECT_NE(dot.find(label), std::string::npos);
  }
}

TEST(CircuitFormat, NodeLabels) {
  EXPECT_EQ(NodeLabel(FeatureNode::Feature(2, 117, 14)), "L2/F117@14");
  EXPECT_EQ(NodeLabel(FeatureNode::Embedding(5, 0)), "Emb@0");
}

TEST(CircuitFormat, MalformedInputNamesTheLine) {
  const Instance inst(2, 9, 3, 17);
  const auto g = ExtractCircuit(inst.ctx(), FeatureNode::Logit(2, 1, 2), {});
  auto text = ExportText(g);
  const auto pos = text.find("\nnode\t");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos + 1, 4, "nope");
  try {
    ImportText(text);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
  }
  for (const char* bad : {"", "cellcircuit-circuit v2\n", "cellcircuit-circuit v1\ntarget\tQ:1@1\n"}) {
    try {
      ImportText(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kParse);
    }
  }
}

TEST(CircuitParams, InvalidParamsAreConfigErrors) {
  for (auto mutate : std::vector<std::function<void(ExtractionParams&)>>{
           [](auto& p) { p.top_k = 0; }, [](auto& p) { p.max_depth = 0; },
           [](auto& p) { p.max_nodes = 1; }, [](auto& p) { p.threshold = -1.0; }}) {
    ExtractionParams p;
    mutate(p);
    try {
      p.Validate();
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    }
  }
}

}  // namespace
}  // namespace cellcircuit
