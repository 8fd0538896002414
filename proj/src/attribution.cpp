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

#include "cellcircuit/attribution.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "cellcircuit/error.hpp"

namespace cellcircuit {
namespace {

int ParseField(std::string_view text, std::string_view whole) {
  int v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    Fail(ErrorKind::kParse, "malformed node id '" + std::string(whole) + "'");
  return v;
}

// Where the destination reads the residual stream.
struct ReadPoint {
  RowVec<double> covector;  // pulled back through the frozen LayerNorm
  double constant = 0.0;    // LayerNorm shift dotted with the read vector
  int top = 0;              // last attention block upstream of the read
  int max_src_layer = 0;    // sources written by blocks < this
};

// First attention block that reads what the source writes.
int FirstReader(const FeatureNode& src) {
  return src.kind == NodeKind::kEmbedding ? 0 : src.layer + 1;
}

ReadPoint MakeReadPoint(const AttributionContext& ctx, const FeatureNode& dst) {
  const auto P = ctx.model().view();
  ReadPoint rp;
  if (dst.kind == NodeKind::kFeature) {
    const auto& tc = ctx.transcoder(dst.layer);
    const RowVec<double> enc = tc.w_enc().row(dst.index);
    rp.covector = ctx.Ln2Fold(dst.layer, dst.position).ApplyTransposed(enc);
    rp.constant = enc.dot(P.ln2_b(dst.layer));
    rp.top = dst.layer;
    rp.max_src_layer = dst.layer;
  } else if (dst.kind == NodeKind::kLogit) {
    const auto& s = ctx.session();
    const int t = dst.position;
    const RowVec<double> col = P.w_unembed().col(dst.index).transpose();
    const AffineFold fold{(P.lnf_g().array() * s.ln_final.rstd[t]).matrix(), true};
    rp.covector = fold.ApplyTransposed(col);
    rp.constant = col.dot(P.lnf_b());
    rp.top = ctx.n_layers() - 1;
    rp.max_src_layer = ctx.n_layers();
  } else {
    Fail(ErrorKind::kInput, "node " + dst.Id() + " has no upstream contributions");
  }
  return rp;
}

}  // namespace

std::string FeatureNode::Id() const {
  const std::string at = "@" + std::to_string(position);
  switch (kind) {
    case NodeKind::kFeature:
      return "F:" + std::to_string(layer) + ":" + std::to_string(index) + at;
    case NodeKind::kEmbedding:
      return "E:" + std::to_string(index) + at;
    case NodeKind::kBias:
      return "B:" + std::to_string(layer) + at;
    case NodeKind::kError:
      return "R:" + std::to_string(layer) + at;
    case NodeKind::kLogit:
      return "L:" + std::to_string(layer) + ":" + std::to_string(index) + at;
  }
  return {};
}

FeatureNode FeatureNode::Parse(std::string_view id) {
  const auto at = id.rfind('@');
  if (id.size() < 4 || id[1] != ':' || at == std::string_view::npos)
    Fail(ErrorKind::kParse, "malformed node id '" + std::string(id) + "'");
  const int pos = ParseField(id.substr(at + 1), id);
  const std::string_view body = id.substr(2, at - 2);
  const auto colon = body.find(':');
  auto two = [&](int& a, int& b) {
    if (colon == std::string_view::npos)
      Fail(ErrorKind::kParse, "malformed node id '" + std::string(id) + "'");
    a = ParseField(body.substr(0, colon), id);
    b = ParseField(body.substr(colon + 1), id);
  };
  int a = 0, b = 0;
  switch (id[0]) {
    case 'F':
      two(a, b);
      return Feature(a, b, pos);
    case 'L':
      two(a, b);
      return Logit(a, b, pos);
    case 'E':
      return Embedding(ParseField(body, id), pos);
    case 'B':
      return Bias(ParseField(body, id), pos);
    case 'R':
      return Error(ParseField(body, id), pos);
    default:
      Fail(ErrorKind::kParse, "unknown node kind in '" + std::string(id) + "'");
  }
}

const char* NodeKindName(NodeKind kind) {
  switch (kind) {
    case NodeKind::kEmbedding: return "embedding";
    case NodeKind::kFeature: return "feature";
    case NodeKind::kBias: return "bias";
    case NodeKind::kError: return "error";
    case NodeKind::kLogit: return "logit";
  }
  return "?";
}

const char* PathKindName(PathKind kind) {
  switch (kind) {
    case PathKind::kSameToken: return "same_token";
    case PathKind::kDirect: return "direct";
    case PathKind::kAttention: return "attention";
  }
  return "?";
}

RowVec<double> AffineFold::Apply(const RowVec<double>& v) const {
  if (!centered) return v.cwiseProduct(scale);
  return ((v.array() - v.mean()) * scale.array()).matrix();
}

// (v - mean v) is symmetric, so A^T c = center(scale * c).
RowVec<double> AffineFold::ApplyTransposed(const RowVec<double>& c) const {
  RowVec<double> sc = c.cwiseProduct(scale);
  if (centered) sc.array() -= sc.mean();
  return sc;
}

double ConnectionWeight(const Transcoder<double>& src, int i, const Transcoder<double>& dst,
                        int j, const AffineFold& fold) {
  if (src.layer() >= dst.layer())
    Fail(ErrorKind::kInput, "connection weight needs src layer < dst layer, got " +
                                std::to_string(src.layer()) + " -> " +
                                std::to_string(dst.layer()));
  if (i < 0 || i >= src.hidden() || j < 0 || j >= dst.hidden())
    Fail(ErrorKind::kInput, "feature index out of range");
  if (fold.scale.size() != src.d_model() || src.d_model() != dst.d_model())
    Fail(ErrorKind::kInput, "width mismatch in connection weight");
  const RowVec<double> dec = src.w_dec().col(i).transpose();
  return fold.Apply(dec).dot(dst.w_enc().row(j));
}

AttributionContext::AttributionContext(const Model<double>& model,
                                       std::span<const Transcoder<double>> transcoders,
                                       const TraceSession& session)
    : model_(&model), transcoders_(transcoders), session_(&session) {
  const auto& cfg = model.config();
  if (static_cast<int>(session.layers.size()) != cfg.n_layers)
    Fail(ErrorKind::kState, "session does not match model depth");
  if (static_cast<int>(transcoders.size()) != cfg.n_layers)
    Fail(ErrorKind::kState, "need one transcoder per layer, got " +
                                std::to_string(transcoders.size()));
  if (!session.has_transcoders())
    Fail(ErrorKind::kState, "session was captured without transcoder activations");
  if (session.mode == ModeKind::kMlpAblated)
    Fail(ErrorKind::kState, "cannot attribute an MLP-ablated session");
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (transcoders[l].d_model() != cfg.d_model || transcoders[l].layer() != l)
      Fail(ErrorKind::kState, "transcoder " + std::to_string(l) + " does not fit the model");
  }
  const auto P = model.view();
  const int dh = cfg.d_head();
  ov_.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (int h = 0; h < cfg.n_heads; ++h)
      ov_[l].push_back(P.wv(l).middleCols(h * dh, dh) * P.wo(l).middleRows(h * dh, dh));
    attn_shift_.push_back(P.ln1_b(l) * P.wv(l) * P.wo(l));
  }
}

void AttributionContext::CheckNode(const FeatureNode& node) const {
  const auto& cfg = model_->config();
  auto bad = [&](const std::string& why) {
    Fail(ErrorKind::kInput, "node " + node.Id() + ": " + why);
  };
  if (node.position < 0 || node.position >= n_tokens()) bad("position out of range");
  switch (node.kind) {
    case NodeKind::kFeature:
      if (node.layer < 0 || node.layer >= cfg.n_layers) bad("layer out of range");
      if (node.index < 0 || node.index >= transcoders_[node.layer].hidden())
        bad("feature index out of range");
      break;
    case NodeKind::kEmbedding:
      if (node.layer != -1 || node.index != session_->ids[node.position])
        bad("embedding does not match the token at that position");
      break;
    case NodeKind::kBias:
      if (node.layer < 0 || node.layer > cfg.n_layers) bad("layer out of range");
      break;
    case NodeKind::kError:
      if (node.layer < 0 || node.layer >= cfg.n_layers) bad("layer out of range");
      break;
    case NodeKind::kLogit:
      if (node.layer != cfg.n_layers) bad("logit layer must equal the model depth");
      if (node.index < 0 || node.index >= cfg.vocab_size) bad("token id out of range");
      break;
  }
}

double AttributionContext::PreActivation(const FeatureNode& node) const {
  CheckNode(node);
  if (node.kind == NodeKind::kFeature)
    return session_->layers[node.layer].tc_pre(node.position, node.index);
  if (node.kind == NodeKind::kLogit) return session_->logits(node.position, node.index);
  return 0.0;
}

double AttributionContext::Activation(const FeatureNode& node) const {
  if (node.kind == NodeKind::kFeature) return std::max(0.0, PreActivation(node));
  if (node.kind == NodeKind::kLogit) return PreActivation(node);
  CheckNode(node);
  return 0.0;
}

double AttributionContext::EncoderBias(const FeatureNode& node) const {
  if (node.kind == NodeKind::kFeature) return transcoders_[node.layer].b_enc()(node.index);
  return 0.0;
}

AffineFold AttributionContext::Ln2Fold(int layer, int position) const {
  const auto P = model_->view();
  const double rstd = session_->layers[layer].ln2.rstd[position];
  return {(P.ln2_g(layer).array() * rstd).matrix(), true};
}

AffineFold AttributionContext::Ln1Fold(int layer, int position) const {
  const auto P = model_->view();
  const double rstd = session_->layers[layer].ln1.rstd[position];
  return {(P.ln1_g(layer).array() * rstd).matrix(), true};
}

RowVec<double> AttributionContext::SourceVector(const FeatureNode& node) const {
  CheckNode(node);
  const int s = node.position;
  switch (node.kind) {
    case NodeKind::kEmbedding:
      return session_->layers[0].resid_pre.row(s);
    case NodeKind::kFeature:
      return Activation(node) * transcoders_[node.layer].w_dec().col(node.index).transpose();
    case NodeKind::kBias:
      if (node.layer == n_layers()) return RowVec<double>::Zero(model_->config().d_model);
      return transcoders_[node.layer].b_dec() + attn_shift_[node.layer];
    case NodeKind::kError: {
      const auto& lc = session_->layers[node.layer];
      if (session_->mode != ModeKind::kOriginal)
        return RowVec<double>::Zero(model_->config().d_model);
      const auto& tc = transcoders_[node.layer];
      const RowVec<double> z = lc.tc_pre.row(s).cwiseMax(0.0);
      return lc.true_mlp_out.row(s) - (z * tc.w_dec().transpose() + tc.b_dec());
    }
    case NodeKind::kLogit:
      break;
  }
  Fail(ErrorKind::kInput, "logit nodes write nothing to the residual stream");
}

AttributionEdge SameTokenAttribution(const AttributionContext& ctx, const FeatureNode& src,
                                     const FeatureNode& dst) {
  if (src.kind != NodeKind::kFeature || dst.kind != NodeKind::kFeature)
    Fail(ErrorKind::kInput, "same-token attribution links two features");
  if (src.position != dst.position)
    Fail(ErrorKind::kInput, "same-token attribution needs a shared position");
  ctx.CheckNode(src);
  ctx.CheckNode(dst);
  const double w = ConnectionWeight(ctx.transcoder(src.layer), src.index,
                                    ctx.transcoder(dst.layer), dst.index,
                                    ctx.Ln2Fold(dst.layer, dst.position));
  return {src, dst, ctx.Activation(src) * w, PathKind::kSameToken};
}

AttributionEdge AttentionPathAttribution(const AttributionContext& ctx, const FeatureNode& src,
                                         int head_layer, int head, const FeatureNode& dst) {
  ctx.CheckNode(src);
  ctx.CheckNode(dst);
  const auto rp = MakeReadPoint(ctx, dst);
  if (head_layer < FirstReader(src) || head_layer > rp.top)
    Fail(ErrorKind::kInput, "head layer " + std::to_string(head_layer) + " does not lie between " +
                                src.Id() + " and " + dst.Id());
  if (head < 0 || head >= ctx.model().config().n_heads)
    Fail(ErrorKind::kInput, "head index out of range");
  if (src.position > dst.position)
    Fail(ErrorKind::kInput, "attention cannot read a later position");
  const double a =
      ctx.session().layers[head_layer].attention[head](dst.position, src.position);
  const RowVec<double> moved =
      ctx.Ln1Fold(head_layer, src.position).Apply(ctx.SourceVector(src)) *
      ctx.Ovc(head_layer, head);
  return {src, dst, a * moved.dot(rp.covector), PathKind::kAttention, head_layer, head};
}

std::vector<AttributionEdge> DecomposeNode(const AttributionContext& ctx,
                                           const FeatureNode& dst) {
  ctx.CheckNode(dst);
  const auto rp = MakeReadPoint(ctx, dst);
  const auto& cfg = ctx.model().config();
  const auto& session = ctx.session();
  const int t = dst.position, d = cfg.d_model, H = cfg.n_heads, n = t + 1;

  // Backward pass of the read covector through frozen attention. mid holds
  // the covector at the stream between attention and MLP of block m;
  // reads[m][h] the part entering at block m through head h, already pulled
  // back through that block's LN1.
  std::vector<std::vector<Mat<double>>> reads(rp.top + 1);
  Mat<double> mid = Mat<double>::Zero(n, d);
  mid.row(t) = rp.covector;
  for (int m = rp.top; m >= 0; --m) {
    Mat<double> next = mid;
    for (int h = 0; h < H; ++h) {
      const Mat<double> a = session.layers[m].attention[h].topLeftCorner(n, n);
      Mat<double> r = a.transpose() * mid * ctx.Ovc(m, h).transpose();
      for (int s = 0; s < n; ++s) r.row(s) = ctx.Ln1Fold(m, s).ApplyTransposed(r.row(s));
      next += r;
      reads[m].push_back(std::move(r));
    }
    mid = std::move(next);
  }

  std::vector<AttributionEdge> edges;
  auto emit = [&](const FeatureNode& src, const RowVec<double>& w, PathKind same_kind) {
    if (src.position == t)
      edges.push_back({src, dst, w.dot(rp.covector), same_kind});
    for (int m = FirstReader(src); m <= rp.top; ++m)
      for (int h = 0; h < H; ++h)
        edges.push_back(
            {src, dst, w.dot(reads[m][h].row(src.position)), PathKind::kAttention, m, h});
  };

  for (int s = 0; s < n; ++s) {
    const auto emb = FeatureNode::Embedding(session.ids[s], s);
    emit(emb, ctx.SourceVector(emb), PathKind::kDirect);
  }
  for (int l = 0; l < rp.max_src_layer; ++l) {
    const auto& tc = ctx.transcoder(l);
    for (int s = 0; s < n; ++s) {
      for (int i = 0; i < tc.hidden(); ++i) {
        if (session.layers[l].tc_pre(s, i) <= 0.0) continue;
        const auto f = FeatureNode::Feature(l, i, s);
        emit(f, ctx.SourceVector(f), PathKind::kSameToken);
      }
      const auto err = FeatureNode::Error(l, s);
      emit(err, ctx.SourceVector(err), PathKind::kDirect);
      const auto bias = FeatureNode::Bias(l, s);
      emit(bias, ctx.SourceVector(bias), PathKind::kDirect);
    }
  }
  // Constants at the read itself: the LN shift of the destination, and for a
  // feature also the shift carried by its own block's attention.
  double own = rp.constant;
  if (dst.kind == NodeKind::kFeature) {
    own += ctx.attn_shift_[dst.layer].dot(rp.covector);
  }
  edges.push_back({FeatureNode::Bias(dst.layer, t), dst, own, PathKind::kDirect});
  return edges;
}

std::vector<AttributionEdge> DecomposeFeature(const AttributionContext& ctx,
                                              const FeatureNode& dst) {
  if (dst.kind != NodeKind::kFeature) Fail(ErrorKind::kInput, dst.Id() + " is not a feature");
  return DecomposeNode(ctx, dst);
}

std::vector<AttributionEdge> LogitAttribution(const AttributionContext& ctx, int token_id,
                                              int position) {
  return DecomposeNode(ctx, FeatureNode::Logit(ctx.n_layers(), token_id, position));
}

double CompletenessResidual(const AttributionContext& ctx, const FeatureNode& dst,
                            std::span<const AttributionEdge> edges) {
  double sum = ctx.EncoderBias(dst);
  for (const auto& e : edges) sum += e.value;
  return ctx.PreActivation(dst) - sum;
}

std::vector<std::pair<FeatureNode, double>> TotalsBySource(
    std::span<const AttributionEdge> edges) {
  std::map<FeatureNode, double> totals;
  for (const auto& e : edges) totals[e.src] += e.value;
  std::vector<std::pair<FeatureNode, double>> out(totals.begin(), totals.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::abs(a.second) > std::abs(b.second);
  });
  return out;
}

}  // namespace cellcircuit
