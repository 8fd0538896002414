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

#include "cellcircuit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cellcircuit/corpus.hpp"
#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"

namespace cellcircuit {
namespace {

RowVec<double> LogSoftmax(const RowVec<double>& x) {
  const double mx = x.maxCoeff();
  const double lse = mx + std::log((x.array() - mx).exp().sum());
  return (x.array() - lse).matrix();
}

}  // namespace

double SoftmaxKl(const RowVec<double>& p_logits, const RowVec<double>& q_logits) {
  const RowVec<double> lp = LogSoftmax(p_logits), lq = LogSoftmax(q_logits);
  const double kl = (lp.array().exp() * (lp - lq).array()).sum();
  return std::max(0.0, kl);  // clamp rounding below zero
}

template <typename T>
ModeComparison CompareModes(const Model<T>& model, std::span<const Transcoder<T>> transcoders,
                            const std::vector<std::vector<int>>& sequences) {
  if (static_cast<int>(transcoders.size()) != model.config().n_layers)
    Fail(ErrorKind::kState, "mode comparison needs a transcoder for every layer (have " +
                                std::to_string(transcoders.size()) + " of " +
                                std::to_string(model.config().n_layers) + ")");
  ModeComparison c;
  for (const auto& ids : sequences) {
    if (ids.size() < 2) continue;
    const auto orig = Forward(model, ids, ExecutionMode<T>::Original(), false).logits;
    const auto repl = Forward(model, ids, ExecutionMode<T>::Replaced(transcoders), false).logits;
    const auto abl = Forward(model, ids, ExecutionMode<T>::MlpAblated(), false).logits;
    for (size_t t = 0; t + 1 < ids.size(); ++t) {
      const auto r = static_cast<Eigen::Index>(t);
      const int next = ids[t + 1];
      const RowVec<double> lo = LogSoftmax(orig.row(r));
      c.loss_original -= lo(next);
      c.loss_replaced -= LogSoftmax(repl.row(r))(next);
      c.loss_ablated -= LogSoftmax(abl.row(r))(next);
      c.kl_replaced += SoftmaxKl(orig.row(r), repl.row(r));
      c.kl_ablated += SoftmaxKl(orig.row(r), abl.row(r));
      ++c.n_tokens;
    }
  }
  if (c.n_tokens == 0) Fail(ErrorKind::kInput, "validation set has no next-token targets");
  const double n = static_cast<double>(c.n_tokens);
  c.loss_original /= n;
  c.loss_replaced /= n;
  c.loss_ablated /= n;
  c.kl_replaced /= n;
  c.kl_ablated /= n;
  return c;
}

std::string FormatModeTable(const ModeComparison& c) {
  std::ostringstream os;
  os << "metric\tmode\tvalue\n";
  os << "val_loss\t" << ModeName(ModeKind::kOriginal) << '\t' << FormatDouble(c.loss_original) << '\n';
  os << "val_loss\t" << ModeName(ModeKind::kTranscoderReplaced) << '\t'
     << FormatDouble(c.loss_replaced) << '\n';
  os << "val_loss\t" << ModeName(ModeKind::kMlpAblated) << '\t' << FormatDouble(c.loss_ablated) << '\n';
  os << "kl\t" << ModeName(ModeKind::kTranscoderReplaced) << '\t' << FormatDouble(c.kl_replaced) << '\n';
  os << "kl\t" << ModeName(ModeKind::kMlpAblated) << '\t' << FormatDouble(c.kl_ablated) << '\n';
  return os.str();
}

template <typename T>
std::vector<MlpData> CollectMlpData(const Model<T>& model,
                                    const std::vector<std::vector<int>>& sequences) {
  const auto& cfg = model.config();
  long total = 0;
  for (const auto& s : sequences) total += static_cast<long>(s.size());
  std::vector<MlpData> out(cfg.n_layers);
  for (auto& d : out) {
    d.inputs.resize(total, cfg.d_model);
    d.targets.resize(total, cfg.d_model);
  }
  long row = 0;
  for (const auto& ids : sequences) {
    if (ids.empty()) continue;
    const auto cache = RunForward(model, ids, ExecutionMode<T>::Original());
    const auto n = static_cast<Eigen::Index>(ids.size());
    for (int l = 0; l < cfg.n_layers; ++l) {
      out[l].inputs.middleRows(row, n) = cache.blocks[l].h2.template cast<float>();
      out[l].targets.middleRows(row, n) = cache.blocks[l].true_mlp_out.template cast<float>();
    }
    row += n;
  }
  return out;
}

template <typename T>
std::vector<double> L0ByLayer(std::span<const Transcoder<T>> transcoders,
                              std::span<const MlpData> data) {
  if (transcoders.size() != data.size())
    Fail(ErrorKind::kState, "need one activation stream per transcoder");
  std::vector<double> l0;
  for (size_t l = 0; l < transcoders.size(); ++l)
    l0.push_back(ComputeStats(transcoders[l], Mat<T>(data[l].inputs.template cast<T>())).mean_l0);
  return l0;
}

std::string FormatL0Table(std::span<const double> l0) {
  std::ostringstream os;
  os << "layer\tmean_l0\n";
  for (size_t l = 0; l < l0.size(); ++l) os << l << '\t' << FormatDouble(l0[l]) << '\n';
  return os.str();
}

LiveHistogram LiveFeatureHistogram(const SparsityStats& stats, double threshold,
                                   double bin_width) {
  if (!(bin_width > 0.0)) Fail(ErrorKind::kConfig, "histogram bin width must be positive");
  LiveHistogram h;
  h.threshold = threshold;
  std::vector<long> index;
  for (double p : stats.activation_prob) {
    if (p <= 0.0) {
      ++h.dead_count;
      continue;
    }
    const double lg = std::log10(p);
    if (lg >= threshold) ++h.live_count;
    index.push_back(static_cast<long>(std::floor(lg / bin_width)));
  }
  if (index.empty()) return h;
  const auto [lo, hi] = std::minmax_element(index.begin(), index.end());
  for (long k = *lo; k <= *hi; ++k)
    h.bins.push_back({static_cast<double>(k) * bin_width, static_cast<double>(k + 1) * bin_width, 0});
  for (long k : index) ++h.bins[k - *lo].count;
  return h;
}

std::string FormatHistogram(const LiveHistogram& h) {
  std::ostringstream os;
  os << "# live=" << h.live_count << " dead=" << h.dead_count
     << " threshold=" << FormatDouble(h.threshold) << '\n';
  os << "bin_lo\tbin_hi\tcount\n";
  for (const auto& b : h.bins)
    os << FormatDouble(b.lo) << '\t' << FormatDouble(b.hi) << '\t' << b.count << '\n';
  return os.str();
}

std::vector<std::string> TokenGenes(const Vocab& vocab, std::span<const int> ids) {
  const std::string text = vocab.Decode(ids);
  const auto genes = FindGeneSpans(text);
  const auto spans = TokenSpans(vocab, ids);
  std::vector<std::string> out(ids.size());
  for (size_t t = 0; t < ids.size(); ++t) {
    const auto [b, e] = spans[t];
    for (const auto& g : genes) {
      if (b < g.end && g.begin < e) {
        out[t] = g.gene;
        break;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<FeatureReport> FeatureReports(const Model<T>& model, const Transcoder<T>& tc,
                                          const Vocab& vocab,
                                          std::span<const std::string> sentences,
                                          std::span<const int> features, int top_m, int window) {
  const int layer = tc.layer();
  if (layer < 0 || layer >= model.config().n_layers)
    Fail(ErrorKind::kInput, "no layer " + std::to_string(layer) + " in the model");
  for (int f : features)
    if (f < 0 || f >= tc.hidden())
      Fail(ErrorKind::kInput, "feature " + std::to_string(f) + " out of range for layer " +
                                  std::to_string(layer));
  if (top_m < 0) Fail(ErrorKind::kInput, "context count must be >= 0");

  struct Hit {
    double act;
    int sentence, position;
  };
  std::vector<std::vector<Hit>> hits(features.size());
  std::vector<long> fired(features.size(), 0);
  std::vector<std::vector<int>> all_ids;
  long n_tokens = 0;
  auto worse = [](const Hit& a, const Hit& b) {  // heap top = weakest kept hit
    if (a.act != b.act) return a.act > b.act;
    if (a.sentence != b.sentence) return a.sentence < b.sentence;
    return a.position < b.position;
  };
  for (size_t s = 0; s < sentences.size(); ++s) {
    auto ids = EncodeWithBos(vocab, sentences[s]);
    if (static_cast<int>(ids.size()) > model.config().max_context)
      ids.resize(model.config().max_context);
    const auto cache = RunForward(model, ids, ExecutionMode<T>::Original());
    const Mat<T> pre = tc.PreActivation(cache.blocks[layer].h2);
    n_tokens += static_cast<long>(ids.size());
    for (size_t k = 0; k < features.size(); ++k) {
      for (int t = 0; t < pre.rows(); ++t) {
        const double a = static_cast<double>(pre(t, features[k]));
        if (a <= 0.0) continue;
        ++fired[k];
        if (vocab.is_special(ids[t]) || top_m == 0) continue;
        auto& heap = hits[k];
        const Hit h{a, static_cast<int>(s), t};
        if (static_cast<int>(heap.size()) < top_m) {
          heap.push_back(h);
          std::push_heap(heap.begin(), heap.end(), worse);
        } else if (worse(h, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), worse);
          heap.back() = h;
          std::push_heap(heap.begin(), heap.end(), worse);
        }
      }
    }
    all_ids.push_back(std::move(ids));
  }

  std::vector<FeatureReport> reports;
  for (size_t k = 0; k < features.size(); ++k) {
    FeatureReport r;
    r.layer = layer;
    r.feature = features[k];
    r.n_tokens = n_tokens;
    r.log10_ef = fired[k] == 0 ? -std::numeric_limits<double>::infinity()
                               : std::log10(static_cast<double>(fired[k]) /
                                            static_cast<double>(n_tokens));
    auto& heap = hits[k];
    std::sort(heap.begin(), heap.end(), worse);
    for (const auto& h : heap) {
      const auto& ids = all_ids[h.sentence];
      const auto genes = TokenGenes(vocab, ids);
      FeatureContext c;
      c.sentence = h.sentence;
      c.position = h.position;
      c.activation = h.act;
      c.token = vocab.token_bytes(ids[h.position]);
      c.gene = genes[h.position];
      const int lo = std::max(0, h.position - window);
      const int hi = std::min(static_cast<int>(ids.size()) - 1, h.position + window);
      for (int t = lo; t <= hi; ++t) {
        const auto& bytes = vocab.token_bytes(ids[t]);
        c.window += t == h.position ? "[[" + bytes + "]]" : bytes;
      }
      r.contexts.push_back(std::move(c));
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

std::string FormatFeatureReports(std::span<const FeatureReport> reports) {
  std::ostringstream os;
  os << "layer\tfeature\tlog10_ef\trank\tsentence\tposition\tactivation\ttoken\tgene\twindow\n";
  for (const auto& r : reports) {
    const std::string ef = std::isinf(r.log10_ef) ? "-inf" : FormatDouble(r.log10_ef);
    if (r.contexts.empty()) {
      os << r.layer << '\t' << r.feature << '\t' << ef << "\t-\t-\t-\t-\t-\t-\t-\n";
      continue;
    }
    for (size_t i = 0; i < r.contexts.size(); ++i) {
      const auto& c = r.contexts[i];
      os << r.layer << '\t' << r.feature << '\t' << ef << '\t' << i + 1 << '\t' << c.sentence
         << '\t' << c.position << '\t' << FormatDouble(c.activation) << '\t'
         << EscapeBytes(c.token) << '\t' << (c.gene.empty() ? "-" : c.gene) << '\t'
         << EscapeBytes(c.window) << '\n';
    }
  }
  return os.str();
}

#define CELLCIRCUIT_EVAL(T)                                                                     \
  template ModeComparison CompareModes(const Model<T>&, std::span<const Transcoder<T>>,        \
                                       const std::vector<std::vector<int>>&);                  \
  template std::vector<MlpData> CollectMlpData(const Model<T>&,                                \
                                               const std::vector<std::vector<int>>&);          \
  template std::vector<double> L0ByLayer(std::span<const Transcoder<T>>,                       \
                                         std::span<const MlpData>);                            \
  template std::vector<FeatureReport> FeatureReports(const Model<T>&, const Transcoder<T>&,    \
                                                     const Vocab&, std::span<const std::string>, \
                                                     std::span<const int>, int, int);
CELLCIRCUIT_EVAL(float)
CELLCIRCUIT_EVAL(double)
#undef CELLCIRCUIT_EVAL

}  // namespace cellcircuit
