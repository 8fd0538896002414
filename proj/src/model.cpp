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

#include "cellcircuit/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"
#include "cellcircuit/optim.hpp"
#include "cellcircuit/rng.hpp"
#include "cellcircuit/tokenizer.hpp"

namespace cellcircuit {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

template <typename T, typename G, typename B>
void LayerNormForward(const Mat<T>& x, const G& gamma, const B& beta, Mat<T>& out,
                      ColVec<T>& mean, ColVec<T>& rstd) {
  const auto d = static_cast<T>(x.cols());
  mean = x.rowwise().sum() / d;
  Mat<T> xc = x.colwise() - mean;
  rstd = ((xc.array().square().rowwise().sum() / d) + static_cast<T>(kLnEps)).rsqrt().matrix();
  out = xc.array().colwise() * rstd.array();
  out = (out.array().rowwise() * gamma.array()).rowwise() + beta.array();
}

// Returns d(loss)/dx and accumulates the scale/shift gradients.
template <typename T, typename G, typename DG, typename DB>
Mat<T> LayerNormBackward(const Mat<T>& x, const ColVec<T>& mean, const ColVec<T>& rstd,
                         const G& gamma, const Mat<T>& dy, DG&& dgamma, DB&& dbeta) {
  const auto d = static_cast<T>(x.cols());
  const Mat<T> xhat = ((x.colwise() - mean).array().colwise() * rstd.array()).matrix();
  dgamma += dy.cwiseProduct(xhat).colwise().sum();
  dbeta += dy.colwise().sum();
  const Mat<T> dxhat = (dy.array().rowwise() * gamma.array()).matrix();
  const ColVec<T> m1 = dxhat.rowwise().sum() / d;
  const ColVec<T> m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / d;
  Mat<T> dx = dxhat.colwise() - m1;
  dx -= (xhat.array().colwise() * m2.array()).matrix();
  return (dx.array().colwise() * rstd.array()).matrix();
}

template <typename T>
T Gelu(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T GeluGrad(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  const T du = static_cast<T>(kGeluC) * (T(1) + T(3) * static_cast<T>(kGeluA) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
void CausalSoftmax(Mat<T>& s) {
  const auto n = s.rows();
  for (Eigen::Index t = 0; t < n; ++t) {
    T mx = s(t, 0);
    for (Eigen::Index j = 1; j <= t; ++j) mx = std::max(mx, s(t, j));
    T sum = 0;
    for (Eigen::Index j = 0; j <= t; ++j) {
      s(t, j) = std::exp(s(t, j) - mx);
      sum += s(t, j);
    }
    for (Eigen::Index j = 0; j <= t; ++j) s(t, j) /= sum;
    for (Eigen::Index j = t + 1; j < n; ++j) s(t, j) = T(0);
  }
}

template <typename T>
void CheckIds(const ModelConfig& cfg, std::span<const int> ids) {
  if (ids.empty()) Fail(ErrorKind::kInput, "empty token sequence");
  if (static_cast<int>(ids.size()) > cfg.max_context)
    Fail(ErrorKind::kInput, "sequence of " + std::to_string(ids.size()) +
                                " tokens exceeds max_context " +
                                std::to_string(cfg.max_context));
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size)
      Fail(ErrorKind::kInput, "token id " + std::to_string(id) + " out of vocabulary");
  }
}

LnFold ToFold(const ColVec<double>& mean, const ColVec<double>& rstd) {
  LnFold f;
  f.mean.assign(mean.data(), mean.data() + mean.size());
  f.rstd.assign(rstd.data(), rstd.data() + rstd.size());
  return f;
}

}  // namespace

void ModelConfig::Validate() const {
  if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_mlp < 1 ||
      max_context < 1)
    Fail(ErrorKind::kConfig, "model dimensions must be >= 1");
  if (d_model % n_heads != 0)
    Fail(ErrorKind::kConfig, "d_model must be divisible by n_heads");
}

const char* ModeName(ModeKind kind) {
  switch (kind) {
    case ModeKind::kOriginal: return "original";
    case ModeKind::kTranscoderReplaced: return "transcoder";
    case ModeKind::kMlpAblated: return "no_mlp";
  }
  return "?";
}

ModelLayout::ModelLayout(const ModelConfig& cfg) {
  const int64_t V = cfg.vocab_size, d = cfg.d_model, C = cfg.max_context, F = cfg.d_mlp;
  wte = AddTensor(specs, total, "wte", {V, d});
  wpe = AddTensor(specs, total, "wpe", {C, d});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockOffsets b{};
    b.ln1_g = AddTensor(specs, total, p + "ln1.g", {d});
    b.ln1_b = AddTensor(specs, total, p + "ln1.b", {d});
    b.wq = AddTensor(specs, total, p + "attn.wq", {d, d});
    b.wk = AddTensor(specs, total, p + "attn.wk", {d, d});
    b.wv = AddTensor(specs, total, p + "attn.wv", {d, d});
    b.wo = AddTensor(specs, total, p + "attn.wo", {d, d});
    b.ln2_g = AddTensor(specs, total, p + "ln2.g", {d});
    b.ln2_b = AddTensor(specs, total, p + "ln2.b", {d});
    b.w_in = AddTensor(specs, total, p + "mlp.w_in", {d, F});
    b.b_in = AddTensor(specs, total, p + "mlp.b_in", {F});
    b.w_out = AddTensor(specs, total, p + "mlp.w_out", {F, d});
    b.b_out = AddTensor(specs, total, p + "mlp.b_out", {d});
    blocks.push_back(b);
  }
  lnf_g = AddTensor(specs, total, "lnf.g", {d});
  lnf_b = AddTensor(specs, total, "lnf.b", {d});
  w_unembed = AddTensor(specs, total, "w_unembed", {d, V});
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg), layout_((cfg.Validate(), cfg)) {
  params_.assign(layout_.total, T(0));
}

template <typename T>
Model<T> Model<T>::Initialized(const ModelConfig& cfg) {
  Model m(cfg);
  Rng rng(cfg.seed);
  auto fill = [&](size_t off, size_t n, double std) {
    for (size_t i = 0; i < n; ++i) m.params_[off + i] = static_cast<T>(std * rng.Normal());
  };
  const double proj_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& s : m.layout_.specs) {
    const auto& n = s.name;
    auto ends_with = [&](std::string_view suf) {
      return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".g")) {
      std::fill_n(m.params_.begin() + static_cast<long>(s.offset), s.numel(), T(1));
    } else if (ends_with(".b") || ends_with("b_in") || ends_with("b_out")) {
      // zero
    } else if (ends_with("attn.wo") || ends_with("mlp.w_out")) {
      fill(s.offset, s.numel(), proj_std);
    } else {
      fill(s.offset, s.numel(), 0.02);
    }
  }
  return m;
}

template <typename T>
ForwardCache<T> RunForward(const Model<T>& model, std::span<const int> ids,
                           const ExecutionMode<T>& mode) {
  const auto& cfg = model.config();
  CheckIds<T>(cfg, ids);
  const bool has_tc = !mode.transcoders.empty();
  if (mode.kind == ModeKind::kTranscoderReplaced && !has_tc)
    Fail(ErrorKind::kState, "transcoder-replaced mode requires transcoders");
  if (has_tc && static_cast<int>(mode.transcoders.size()) != cfg.n_layers)
    Fail(ErrorKind::kState, "expected one transcoder per layer");

  const auto P = model.view();
  const int n = static_cast<int>(ids.size());
  const int d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ForwardCache<T> c;
  c.ids.assign(ids.begin(), ids.end());
  c.mode = mode.kind;
  c.x0.resize(n, d);
  for (int t = 0; t < n; ++t) c.x0.row(t) = P.wte().row(ids[t]) + P.wpe().row(t);

  Mat<T> x = c.x0;
  c.blocks.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& b = c.blocks[l];
    b.x_in = x;
    LayerNormForward(x, P.ln1_g(l), P.ln1_b(l), b.h1, b.ln1_mean, b.ln1_rstd);
    b.q = b.h1 * P.wq(l);
    b.k = b.h1 * P.wk(l);
    b.v = b.h1 * P.wv(l);
    b.y.setZero(n, d);
    b.att.resize(H);
    for (int h = 0; h < H; ++h) {
      Mat<T> s = (b.q.middleCols(h * dh, dh) * b.k.middleCols(h * dh, dh).transpose()) * scale;
      CausalSoftmax(s);
      b.y.middleCols(h * dh, dh) = s * b.v.middleCols(h * dh, dh);
      b.att[h] = std::move(s);
    }
    b.x_mid = x + b.y * P.wo(l);
    LayerNormForward(b.x_mid, P.ln2_g(l), P.ln2_b(l), b.h2, b.ln2_mean, b.ln2_rstd);
    b.pre = b.h2 * P.w_in(l);
    b.pre.rowwise() += P.b_in(l);
    b.act = b.pre.unaryExpr([](T v) { return Gelu(v); });
    b.true_mlp_out = b.act * P.w_out(l);
    b.true_mlp_out.rowwise() += P.b_out(l);
    if (has_tc) b.tc_pre = mode.transcoders[l].PreActivation(b.h2);
    switch (mode.kind) {
      case ModeKind::kOriginal: b.mlp_out = b.true_mlp_out; break;
      case ModeKind::kMlpAblated: b.mlp_out.setZero(n, d); break;
      case ModeKind::kTranscoderReplaced:
        b.mlp_out = mode.transcoders[l].Decode(b.tc_pre.cwiseMax(T(0)));
        break;
    }
    x = b.x_mid + b.mlp_out;
  }
  c.x_final = x;
  LayerNormForward(x, P.lnf_g(), P.lnf_b(), c.hf, c.lnf_mean, c.lnf_rstd);
  c.logits = c.hf * P.w_unembed();
  return c;
}

template <typename T>
TraceSession CaptureSession(const ForwardCache<T>& c) {
  TraceSession s;
  s.mode = c.mode;
  s.ids = c.ids;
  for (const auto& b : c.blocks) {
    LayerCapture lc;
    lc.resid_pre = b.x_in.template cast<double>();
    lc.resid_mid = b.x_mid.template cast<double>();
    lc.ln1 = ToFold(b.ln1_mean.template cast<double>(), b.ln1_rstd.template cast<double>());
    lc.ln2 = ToFold(b.ln2_mean.template cast<double>(), b.ln2_rstd.template cast<double>());
    for (const auto& a : b.att) lc.attention.push_back(a.template cast<double>());
    lc.mlp_in = b.h2.template cast<double>();
    lc.mlp_out = b.mlp_out.template cast<double>();
    lc.true_mlp_out = b.true_mlp_out.template cast<double>();
    lc.tc_pre = b.tc_pre.template cast<double>();
    s.layers.push_back(std::move(lc));
  }
  s.resid_final = c.x_final.template cast<double>();
  s.ln_final = ToFold(c.lnf_mean.template cast<double>(), c.lnf_rstd.template cast<double>());
  s.logits = c.logits.template cast<double>();
  return s;
}

template <typename T>
ForwardOutput Forward(const Model<T>& model, std::span<const int> ids,
                      const ExecutionMode<T>& mode, bool capture) {
  auto cache = RunForward(model, ids, mode);
  ForwardOutput out;
  out.logits = cache.logits.template cast<double>();
  if (capture) out.trace = CaptureSession(cache);
  return out;
}

Mat<double> ReplayLogits(const Model<double>& model, const TraceSession& s) {
  const auto& cfg = model.config();
  const auto P = model.view();
  const int n = s.n_tokens(), d = cfg.d_model, dh = cfg.d_head();
  if (static_cast<int>(s.layers.size()) != cfg.n_layers)
    Fail(ErrorKind::kState, "session does not match model depth");
  auto fold = [&](const Mat<double>& x, const LnFold& f, const RowVec<double>& g,
                  const RowVec<double>& b) {
    Mat<double> out(n, d);
    for (int t = 0; t < n; ++t)
      out.row(t) = ((x.row(t).array() - f.mean[t]) * f.rstd[t] * g.array() + b.array()).matrix();
    return out;
  };
  Mat<double> x = s.layers[0].resid_pre;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lc = s.layers[l];
    const Mat<double> h1 = fold(x, lc.ln1, P.ln1_g(l), P.ln1_b(l));
    const Mat<double> v = h1 * P.wv(l);
    Mat<double> y(n, d);
    for (int h = 0; h < cfg.n_heads; ++h)
      y.middleCols(h * dh, dh) = lc.attention[h] * v.middleCols(h * dh, dh);
    x = x + y * P.wo(l) + lc.mlp_out;
  }
  return fold(x, s.ln_final, P.lnf_g(), P.lnf_b()) * P.w_unembed();
}

template <typename T>
double SequenceLoss(const Model<T>& model, std::span<const int> ids,
                    const ExecutionMode<T>& mode) {
  const auto c = RunForward(model, ids, mode);
  double loss = 0.0;
  for (size_t t = 0; t + 1 < ids.size(); ++t) {
    const auto row = c.logits.row(static_cast<Eigen::Index>(t)).template cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(ids[t + 1]);
  }
  return loss;
}

template <typename T>
double LossAndGradient(const Model<T>& model, std::span<const int> ids,
                       std::span<T> grad, T scale) {
  if (grad.size() != model.params().size())
    Fail(ErrorKind::kInput, "gradient buffer size mismatch");
  const auto c = RunForward(model, ids, ExecutionMode<T>::Original());
  const auto& cfg = model.config();
  const int n = static_cast<int>(ids.size());
  const int H = cfg.n_heads, dh = cfg.d_head();
  const T att_scale = T(1) / std::sqrt(static_cast<T>(dh));
  if (n < 2) return 0.0;

  const auto P = model.view();
  auto G = model.grad_view(grad);

  double loss = 0.0;
  Mat<T> dlogits = Mat<T>::Zero(n, cfg.vocab_size);
  for (int t = 0; t + 1 < n; ++t) {
    const auto row = c.logits.row(t);
    const T mx = row.maxCoeff();
    RowVec<T> p = (row.array() - mx).exp().matrix();
    const T sum = p.sum();
    p /= sum;
    const int target = ids[t + 1];
    loss += -(static_cast<double>(row(target) - mx) - std::log(static_cast<double>(sum)));
    dlogits.row(t) = p * scale;
    dlogits(t, target) -= scale;
  }

  G.w_unembed() += c.hf.transpose() * dlogits;
  const Mat<T> dhf = dlogits * P.w_unembed().transpose();
  Mat<T> dx = LayerNormBackward(c.x_final, c.lnf_mean, c.lnf_rstd, P.lnf_g(), dhf,
                                G.lnf_g(), G.lnf_b());

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& b = c.blocks[l];
    // MLP: x_out = x_mid + act W_out + b_out, act = gelu(LN2(x_mid) W_in + b_in)
    G.b_out(l) += dx.colwise().sum();
    G.w_out(l) += b.act.transpose() * dx;
    const Mat<T> dact = dx * P.w_out(l).transpose();
    const Mat<T> dpre = dact.cwiseProduct(b.pre.unaryExpr([](T v) { return GeluGrad(v); }));
    G.b_in(l) += dpre.colwise().sum();
    G.w_in(l) += b.h2.transpose() * dpre;
    const Mat<T> dh2 = dpre * P.w_in(l).transpose();
    const Mat<T> dx_mid =
        dx + LayerNormBackward(b.x_mid, b.ln2_mean, b.ln2_rstd, P.ln2_g(l), dh2, G.ln2_g(l),
                               G.ln2_b(l));

    // Attention: x_mid = x_in + y W_O, y_h = A_h V_h
    G.wo(l) += b.y.transpose() * dx_mid;
    const Mat<T> dy = dx_mid * P.wo(l).transpose();
    Mat<T> dq(n, cfg.d_model), dk(n, cfg.d_model), dv(n, cfg.d_model);
    for (int h = 0; h < H; ++h) {
      const auto& A = b.att[h];
      const auto dyh = dy.middleCols(h * dh, dh);
      const Mat<T> dA = dyh * b.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * dyh;
      const ColVec<T> rs = dA.cwiseProduct(A).rowwise().sum();
      const Mat<T> dS = A.cwiseProduct((dA.colwise() - rs));
      dq.middleCols(h * dh, dh) = (dS * b.k.middleCols(h * dh, dh)) * att_scale;
      dk.middleCols(h * dh, dh) = (dS.transpose() * b.q.middleCols(h * dh, dh)) * att_scale;
    }
    G.wq(l) += b.h1.transpose() * dq;
    G.wk(l) += b.h1.transpose() * dk;
    G.wv(l) += b.h1.transpose() * dv;
    const Mat<T> dh1 = dq * P.wq(l).transpose() + dk * P.wk(l).transpose() +
                       dv * P.wv(l).transpose();
    dx = dx_mid + LayerNormBackward(b.x_in, b.ln1_mean, b.ln1_rstd, P.ln1_g(l), dh1,
                                    G.ln1_g(l), G.ln1_b(l));
  }
  for (int t = 0; t < n; ++t) {
    G.wte().row(ids[t]) += dx.row(t);
    G.wpe().row(t) += dx.row(t);
  }
  return loss;
}

void LmTrainConfig::Validate() const {
  if (!(lr >= 0.0) || batch_tokens < 1 || steps < 0 || !(warmup_frac >= 0.0 && warmup_frac < 1.0) ||
      !(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0) || !(grad_clip >= 0.0))
    Fail(ErrorKind::kConfig, "invalid LM training config");
}

LmTrainResult TrainLm(Model<float>& model, const std::vector<std::vector<int>>& sequences,
                      const LmTrainConfig& cfg,
                      const std::function<void(long, double)>& on_step) {
  cfg.Validate();
  std::vector<size_t> usable;
  for (size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].size() >= 2) usable.push_back(i);
  }
  if (usable.empty()) Fail(ErrorKind::kInput, "training corpus is empty");

  Rng rng(cfg.seed);
  rng.Shuffle(usable.begin(), usable.end());
  size_t cursor = 0;
  Adam<float> adam(model.params().size());
  std::vector<float> grad(model.params().size());
  LmTrainResult result;

  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> batch;
    long targets = 0;
    while (targets < cfg.batch_tokens) {
      if (cursor == usable.size()) {
        rng.Shuffle(usable.begin(), usable.end());
        cursor = 0;
      }
      const size_t idx = usable[cursor++];
      batch.push_back(idx);
      targets += static_cast<long>(sequences[idx].size()) - 1;
    }
    std::fill(grad.begin(), grad.end(), 0.0f);
    const float scale = 1.0f / static_cast<float>(targets);
    double loss = 0.0;
    for (size_t idx : batch) loss += LossAndGradient<float>(model, sequences[idx], grad, scale);
    loss /= static_cast<double>(targets);
    if (!std::isfinite(loss))
      Fail(ErrorKind::kTraining, "LM loss is not finite at step " + std::to_string(step));

    if (cfg.grad_clip > 0.0) {
      double norm2 = 0.0;
      for (float g : grad) norm2 += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip) {
        const auto k = static_cast<float>(cfg.grad_clip / norm);
        for (auto& g : grad) g *= k;
      }
    }
    const double lr = WarmupCosineLr(cfg.lr, step, cfg.steps, cfg.warmup_frac, cfg.min_lr_ratio);
    adam.Step(model.params(), grad, lr);
    result.loss_curve.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return result;
}

std::vector<int> EncodeWithBos(const Vocab& vocab, std::string_view text) {
  std::vector<int> ids{Vocab::kBos};
  const auto body = vocab.Encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

template <typename T>
std::string PredictCellType(const Model<T>& model, const Vocab& vocab,
                            std::string_view prompt, int max_new_tokens) {
  auto ids = EncodeWithBos(vocab, prompt);
  const int max_context = model.config().max_context;
  if (static_cast<int>(ids.size()) > max_context)
    Fail(ErrorKind::kInput, "prompt exceeds max_context");
  std::vector<int> generated;
  for (int i = 0; i < max_new_tokens && static_cast<int>(ids.size()) < max_context; ++i) {
    const auto c = RunForward(model, ids, ExecutionMode<T>::Original());
    const auto row = c.logits.row(c.logits.rows() - 1);
    int best = -1;
    for (int v = 0; v < row.size(); ++v) {
      if (v >= vocab.size() || vocab.is_special(v)) continue;
      if (best < 0 || row(v) > row(best)) best = v;
    }
    if (best < 0) break;
    if (vocab.token_bytes(best).find('\n') != std::string::npos) break;
    generated.push_back(best);
    ids.push_back(best);
  }
  return std::string(Trim(vocab.Decode(generated)));
}

#define CELLCIRCUIT_INSTANTIATE(T)                                                          \
  template class Model<T>;                                                                  \
  template ForwardCache<T> RunForward(const Model<T>&, std::span<const int>,                \
                                      const ExecutionMode<T>&);                             \
  template TraceSession CaptureSession(const ForwardCache<T>&);                             \
  template ForwardOutput Forward(const Model<T>&, std::span<const int>,                     \
                                 const ExecutionMode<T>&, bool);                            \
  template double SequenceLoss(const Model<T>&, std::span<const int>,                       \
                               const ExecutionMode<T>&);                                    \
  template double LossAndGradient(const Model<T>&, std::span<const int>, std::span<T>, T); \
  template std::string PredictCellType(const Model<T>&, const Vocab&, std::string_view, int);

CELLCIRCUIT_INSTANTIATE(float)
CELLCIRCUIT_INSTANTIATE(double)
#undef CELLCIRCUIT_INSTANTIATE

}  // namespace cellcircuit
