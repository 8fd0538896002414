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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"

namespace cellcircuit {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr const char* kTextHeader = "cellcircuit-circuit v1";

double RootPriority(PriorityMode mode) { return mode == PriorityMode::kMin ? kInf : 1.0; }

double ChildPriority(const AttributionContext& ctx, PriorityMode mode, double parent,
                     const AttributionEdge& e) {
  if (mode == PriorityMode::kMin) return std::min(std::abs(e.value), parent);
  const double scale = std::max(std::abs(ctx.PreActivation(e.dst)), 1e-300);
  return parent * std::abs(e.value) / scale;
}

bool EdgeOrder(const AttributionEdge& a, const AttributionEdge& b) {
  if (a.dst != b.dst) return a.dst < b.dst;
  if (a.src != b.src) return a.src < b.src;
  if (a.path != b.path) return a.path < b.path;
  if (a.head_layer != b.head_layer) return a.head_layer < b.head_layer;
  return a.head < b.head;
}

// Search state; ordering puts the next one to pop on top.
struct State {
  double priority;
  int depth;
  FeatureNode node;
};

struct PopOrder {
  bool operator()(const State& a, const State& b) const {
    if (a.priority != b.priority) return a.priority < b.priority;
    if (a.depth != b.depth) return a.depth > b.depth;
    return b.node < a.node;
  }
};

// Path ranking: priority descending, then fewer hops.
bool BetterKey(double pa, size_t la, double pb, size_t lb) {
  if (pa != pb) return pa > pb;
  return la < lb;
}

const char* PriorityName(PriorityMode m) { return m == PriorityMode::kMin ? "min" : "product"; }

PriorityMode ParsePriority(std::string_view s, const std::string& where) {
  if (s == "min") return PriorityMode::kMin;
  if (s == "product") return PriorityMode::kProduct;
  Fail(ErrorKind::kParse, where + ": unknown priority mode '" + std::string(s) + "'");
}

PathKind ParsePath(std::string_view s, const std::string& where) {
  for (auto k : {PathKind::kSameToken, PathKind::kDirect, PathKind::kAttention})
    if (s == PathKindName(k)) return k;
  Fail(ErrorKind::kParse, where + ": unknown path kind '" + std::string(s) + "'");
}

std::string DotEscape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

}  // namespace

void ExtractionParams::Validate() const {
  if (top_k < 1) Fail(ErrorKind::kConfig, "top_k must be >= 1");
  if (threshold && !(*threshold >= 0.0)) Fail(ErrorKind::kConfig, "threshold must be >= 0");
  if (!(relative_threshold >= 0.0)) Fail(ErrorKind::kConfig, "relative threshold must be >= 0");
  if (max_depth < 1) Fail(ErrorKind::kConfig, "max_depth must be >= 1");
  if (max_nodes < 2) Fail(ErrorKind::kConfig, "max_nodes must be >= 2");
}

bool CircuitGraph::Contains(const FeatureNode& n) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const auto& c) { return c.node == n; });
}

std::vector<FeatureNode> CircuitGraph::NodeSet() const {
  std::vector<FeatureNode> out;
  for (const auto& c : nodes) out.push_back(c.node);
  std::sort(out.begin(), out.end());
  return out;
}

ExtractionParams ResolveParams(const AttributionContext& ctx, const FeatureNode& target,
                               const ExtractionParams& params) {
  params.Validate();
  ExtractionParams r = params;
  if (!r.threshold) r.threshold = r.relative_threshold * std::abs(ctx.PreActivation(target));
  return r;
}

std::vector<AttributionEdge> KeptEdges(const AttributionContext& ctx, const FeatureNode& node,
                                       const ExtractionParams& resolved) {
  const double theta = resolved.threshold.value_or(0.0);
  std::vector<AttributionEdge> kept;
  for (auto& e : DecomposeNode(ctx, node))
    if (e.value != 0.0 && std::abs(e.value) >= theta) kept.push_back(std::move(e));
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    const double x = std::abs(a.value), y = std::abs(b.value);
    if (x != y) return x > y;
    return EdgeOrder(a, b);
  });
  if (kept.size() > static_cast<size_t>(resolved.top_k)) kept.resize(resolved.top_k);
  return kept;
}

CircuitGraph ExtractCircuit(const AttributionContext& ctx, const FeatureNode& target,
                            const ExtractionParams& params, std::span<const TokenInfo> tokens) {
  ctx.CheckNode(target);
  if (!target.expandable())
    Fail(ErrorKind::kInput, "circuit target must be a feature or a logit, got " + target.Id());
  if (target.kind == NodeKind::kFeature && ctx.Activation(target) <= 0.0)
    Fail(ErrorKind::kInput, "target " + target.Id() + " is not active on this prompt");
  if (!tokens.empty() && static_cast<int>(tokens.size()) != ctx.n_tokens())
    Fail(ErrorKind::kInput, "token annotations do not match the prompt length");

  CircuitGraph g;
  g.target = target;
  g.params = ResolveParams(ctx, target, params);
  const auto& p = g.params;

  std::map<FeatureNode, std::vector<AttributionEdge>> kept;  // expansion cache
  std::map<FeatureNode, int> expanded_at;
  std::set<FeatureNode> in_graph;
  std::priority_queue<State, std::vector<State>, PopOrder> queue;
  queue.push({RootPriority(p.priority), 0, target});

  while (!queue.empty()) {
    const State s = queue.top();
    queue.pop();
    if (!in_graph.count(s.node)) {
      if (static_cast<int>(g.nodes.size()) >= p.max_nodes) break;
      in_graph.insert(s.node);
      CircuitNode cn;
      cn.node = s.node;
      cn.activation = ctx.Activation(s.node);
      cn.priority = s.priority;
      cn.depth = s.depth;
      if (!tokens.empty()) {
        cn.token = tokens[s.node.position].text;
        cn.gene_token = !tokens[s.node.position].gene.empty();
      }
      g.nodes.push_back(std::move(cn));
    }
    if (!s.node.expandable() || s.depth >= p.max_depth) continue;
    const auto it = expanded_at.find(s.node);
    if (it != expanded_at.end() && it->second <= s.depth) continue;
    expanded_at[s.node] = s.depth;
    auto& edges = kept[s.node];
    if (edges.empty()) edges = KeptEdges(ctx, s.node, p);
    for (const auto& e : edges)
      queue.push({ChildPriority(ctx, p.priority, s.priority, e), s.depth + 1, e.src});
  }

  for (const auto& [dst, edges] : kept)
    for (const auto& e : edges)
      if (in_graph.count(e.src)) g.edges.push_back(e);
  std::sort(g.edges.begin(), g.edges.end(), EdgeOrder);
  return g;
}

std::vector<CircuitPath> BruteForcePaths(const AttributionContext& ctx, const FeatureNode& target,
                                         const ExtractionParams& params) {
  if (ctx.n_layers() > 3 || ctx.n_tokens() > 8)
    Fail(ErrorKind::kGuard, "instance too large for path enumeration (layers " +
                                std::to_string(ctx.n_layers()) + ", tokens " +
                                std::to_string(ctx.n_tokens()) + ")");
  for (int l = 0; l < ctx.n_layers(); ++l)
    if (ctx.transcoder(l).hidden() > 16)
      Fail(ErrorKind::kGuard, "instance too large for path enumeration (" +
                                  std::to_string(ctx.transcoder(l).hidden()) +
                                  " features in layer " + std::to_string(l) + ")");
  ctx.CheckNode(target);
  const auto p = ResolveParams(ctx, target, params);

  std::map<FeatureNode, std::vector<AttributionEdge>> cache;
  std::vector<CircuitPath> paths;
  CircuitPath current{{target}, RootPriority(p.priority)};
  paths.push_back(current);
  // Recursive walk over kept edges; every prefix is itself a path.
  auto walk = [&](auto&& self, const CircuitPath& at) -> void {
    const FeatureNode& tip = at.nodes.back();
    if (!tip.expandable() || static_cast<int>(at.nodes.size()) > p.max_depth) return;
    auto it = cache.find(tip);
    if (it == cache.end()) it = cache.emplace(tip, KeptEdges(ctx, tip, p)).first;
    for (const auto& e : it->second) {
      CircuitPath next = at;
      next.nodes.push_back(e.src);
      next.priority = ChildPriority(ctx, p.priority, at.priority, e);
      paths.push_back(next);
      self(self, next);
    }
  };
  walk(walk, current);
  std::stable_sort(paths.begin(), paths.end(), [](const CircuitPath& a, const CircuitPath& b) {
    if (a.priority != b.priority || a.nodes.size() != b.nodes.size())
      return BetterKey(a.priority, a.nodes.size(), b.priority, b.nodes.size());
    return a.nodes < b.nodes;
  });
  return paths;
}

std::vector<FeatureNode> PathNodeSet(std::span<const CircuitPath> paths, int max_nodes) {
  struct Key {
    double priority;
    size_t length;
  };
  std::map<FeatureNode, Key> best;
  for (const auto& path : paths) {
    const auto& tip = path.nodes.back();
    auto it = best.find(tip);
    if (it == best.end() ||
        BetterKey(path.priority, path.nodes.size(), it->second.priority, it->second.length))
      best[tip] = {path.priority, path.nodes.size()};
  }
  std::vector<std::pair<FeatureNode, Key>> ranked(best.begin(), best.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    const auto& x = a.second;
    const auto& y = b.second;
    if (x.priority != y.priority || x.length != y.length)
      return BetterKey(x.priority, x.length, y.priority, y.length);
    return a.first < b.first;
  });
  if (ranked.size() > static_cast<size_t>(max_nodes)) ranked.resize(max_nodes);
  std::vector<FeatureNode> out;
  for (const auto& [n, k] : ranked) out.push_back(n);
  std::sort(out.begin(), out.end());
  return out;
}

std::string ExportText(const CircuitGraph& g) {
  std::ostringstream os;
  const auto& p = g.params;
  os << kTextHeader << '\n';
  os << "target\t" << g.target.Id() << '\n';
  os << "params\t" << p.top_k << '\t' << FormatDouble(p.threshold.value_or(0.0)) << '\t'
     << FormatDouble(p.relative_threshold) << '\t' << p.max_depth << '\t' << p.max_nodes << '\t'
     << PriorityName(p.priority) << '\n';
  os << "nodes\t" << g.nodes.size() << '\n';
  for (const auto& n : g.nodes) {
    os << "node\t" << n.node.Id() << '\t' << NodeKindName(n.node.kind) << '\t' << n.node.layer
       << '\t' << n.node.index << '\t' << n.node.position << '\t' << EscapeBytes(n.token) << '\t'
       << FormatDouble(n.activation) << '\t' << FormatDouble(n.priority) << '\t' << n.depth
       << '\t' << (n.gene_token ? 1 : 0) << '\n';
  }
  os << "edges\t" << g.edges.size() << '\n';
  for (const auto& e : g.edges) {
    os << "edge\t" << e.src.Id() << '\t' << e.dst.Id() << '\t' << FormatDouble(e.value) << '\t'
       << PathKindName(e.path) << '\t' << e.head_layer << '\t' << e.head << '\n';
  }
  return os.str();
}

CircuitGraph ImportText(std::string_view text) {
  const auto lines = SplitLines(text);
  size_t i = 0;
  while (i < lines.size() && !lines[i].empty() && lines[i][0] == '#') ++i;  // trace header
  auto where = [&](size_t line) { return "circuit line " + std::to_string(line + 1); };
  auto next = [&](std::string_view tag, size_t n_fields) {
    if (i >= lines.size())
      Fail(ErrorKind::kParse, where(i) + ": unexpected end of input, expected '" +
                                  std::string(tag) + "'");
    auto f = Split(lines[i], '\t');
    if (f.empty() || f[0] != tag || f.size() != n_fields)
      Fail(ErrorKind::kParse, where(i) + ": expected '" + std::string(tag) + "' with " +
                                  std::to_string(n_fields - 1) + " fields");
    ++i;
    return f;
  };
  auto node = [&](const std::string& id) {
    try {
      return FeatureNode::Parse(id);
    } catch (const Error& e) {
      Fail(ErrorKind::kParse, where(i - 1) + ": " + e.what());
    }
  };
  auto integer = [&](const std::string& s) {
    return static_cast<int>(ParseInt(s, where(i - 1)));
  };

  if (i >= lines.size() || lines[i] != kTextHeader)
    Fail(ErrorKind::kParse, where(i) + ": missing '" + std::string(kTextHeader) + "' header");
  ++i;
  CircuitGraph g;
  g.target = node(next("target", 2)[1]);
  {
    const auto f = next("params", 7);
    g.params.top_k = integer(f[1]);
    g.params.threshold = ParseDouble(f[2], where(i - 1));
    g.params.relative_threshold = ParseDouble(f[3], where(i - 1));
    g.params.max_depth = integer(f[4]);
    g.params.max_nodes = integer(f[5]);
    g.params.priority = ParsePriority(f[6], where(i - 1));
  }
  const int n_nodes = integer(next("nodes", 2)[1]);
  for (int k = 0; k < n_nodes; ++k) {
    const auto f = next("node", 11);
    CircuitNode n;
    n.node = node(f[1]);
    if (f[2] != NodeKindName(n.node.kind) || integer(f[3]) != n.node.layer ||
        integer(f[4]) != n.node.index || integer(f[5]) != n.node.position)
      Fail(ErrorKind::kParse, where(i - 1) + ": node fields disagree with id " + f[1]);
    n.token = UnescapeBytes(f[6], where(i - 1));
    n.activation = ParseDouble(f[7], where(i - 1));
    n.priority = ParseDouble(f[8], where(i - 1));
    n.depth = integer(f[9]);
    n.gene_token = integer(f[10]) != 0;
    g.nodes.push_back(std::move(n));
  }
  const int n_edges = integer(next("edges", 2)[1]);
  for (int k = 0; k < n_edges; ++k) {
    const auto f = next("edge", 7);
    AttributionEdge e;
    e.src = node(f[1]);
    e.dst = node(f[2]);
    e.value = ParseDouble(f[3], where(i - 1));
    e.path = ParsePath(f[4], where(i - 1));
    e.head_layer = integer(f[5]);
    e.head = integer(f[6]);
    if (!std::isfinite(e.value)) Fail(ErrorKind::kParse, where(i - 1) + ": non-finite edge");
    g.edges.push_back(e);
  }
  while (i < lines.size() && lines[i].empty()) ++i;
  if (i != lines.size()) Fail(ErrorKind::kParse, where(i) + ": trailing content");
  return g;
}

std::string NodeLabel(const FeatureNode& n) {
  const std::string at = "@" + std::to_string(n.position);
  switch (n.kind) {
    case NodeKind::kFeature:
      return "L" + std::to_string(n.layer) + "/F" + std::to_string(n.index) + at;
    case NodeKind::kEmbedding:
      return "Emb" + at;
    case NodeKind::kBias:
      return "L" + std::to_string(n.layer) + "/bias" + at;
    case NodeKind::kError:
      return "L" + std::to_string(n.layer) + "/err" + at;
    case NodeKind::kLogit:
      return "Logit/" + std::to_string(n.index) + at;
  }
  return {};
}

std::string ExportDot(const CircuitGraph& g) {
  std::ostringstream os;
  os << "digraph circuit {\n  rankdir=BT;\n  node [shape=box, fontname=\"Helvetica\"];\n";
  for (const auto& n : g.nodes) {
    os << "  \"" << n.node.Id() << "\" [label=\"" << DotEscape(NodeLabel(n.node)) << "\"";
    if (!n.token.empty()) os << ", token=\"" << DotEscape(n.token) << "\"";
    if (n.node == g.target) os << ", peripheries=2";
    if (n.gene_token) os << ", gene_token=true, style=filled, fillcolor=\"#f6d77a\"";
    os << "];\n";
  }
  for (const auto& e : g.edges) {
    char value[32];
    std::snprintf(value, sizeof(value), "%.3f", e.value);
    os << "  \"" << e.src.Id() << "\" -> \"" << e.dst.Id() << "\" [label=\"" << value << "\"";
    if (e.path == PathKind::kAttention)
      os << ", style=dashed, head=\"" << e.head_layer << "." << e.head << "\"";
    os << "];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace cellcircuit
