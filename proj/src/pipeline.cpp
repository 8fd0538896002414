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

#include "cellcircuit/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "cellcircuit/checkpoint.hpp"
#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"

namespace cellcircuit {
namespace {

void Require(const std::string& path, const std::string& command) {
  if (!FileExists(path))
    Fail(ErrorKind::kState,
         "missing " + path + "; run `cellcircuit " + command + "` first");
}

void Write(const std::string& path, std::string_view text) {
  MakeDirs(std::filesystem::path(path).parent_path().string());
  WriteFile(path, text);
}

std::string JoinLines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

std::string CurveTable(const char* column, const std::vector<double>& values) {
  std::ostringstream os;
  os << "step\t" << column << '\n';
  for (size_t i = 0; i < values.size(); ++i) os << i << '\t' << FormatDouble(values[i]) << '\n';
  return os.str();
}

Vocab LoadVocab(const Workspace& ws) {
  Require(ws.VocabFile(), "train-bpe");
  return Vocab::Deserialize(ReadFile(ws.VocabFile()));
}

Model<float> LoadLm(const Workspace& ws) {
  Require(ws.LmDir(), "train-lm");
  return LoadModel(ws.LmDir());
}

std::vector<Transcoder<float>> LoadTranscoders(const Workspace& ws, const std::vector<int>& layers) {
  std::vector<Transcoder<float>> out;
  for (int l : layers) {
    Require(ws.TcDir(l), "train-tc");
    out.push_back(LoadTranscoder(ws.TcDir(l)));
    if (out.back().layer() != l)
      Fail(ErrorKind::kFormat, ws.TcDir(l) + " holds a transcoder for another layer");
  }
  return out;
}

std::vector<int> AllLayers(int n) {
  std::vector<int> v(n);
  for (int l = 0; l < n; ++l) v[l] = l;
  return v;
}

}  // namespace

std::vector<std::string> LoadSentences(const std::string& path) {
  Require(path, "gen-corpus");
  std::vector<std::string> out;
  for (auto& line : SplitLines(ReadFile(path)))
    if (!line.empty()) out.push_back(std::move(line));
  return out;
}

std::vector<std::vector<int>> EncodeSentences(const Vocab& vocab,
                                              const std::vector<std::string>& sentences) {
  std::vector<std::vector<int>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(EncodeWithBos(vocab, s + "\n"));
  return out;
}

void RunGenCorpus(const RunConfig& c) {
  c.Validate();
  const Workspace ws(c.workdir);
  SyntheticSpec spec = c.corpus;
  spec.seed = StageSeed(c, "corpus");
  const auto corpus = GenerateSynthetic(spec);
  const auto [train, val] = SplitMatrix(corpus.matrix, c.train_fraction, StageSeed(c, "split"));
  const auto k = static_cast<size_t>(spec.sentence_length);
  Write(ws.Expression(), FormatMatrixCsv(corpus.matrix));
  Write(ws.TrainText(), JoinLines(RenderCorpus(train, k)));
  Write(ws.ValText(), JoinLines(RenderCorpus(val, k)));
  Write(ws.Markers(), FormatMarkers(corpus.markers));
}

void RunTrainBpe(const RunConfig& c) {
  c.Validate();
  const Workspace ws(c.workdir);
  const auto sentences = LoadSentences(ws.TrainText());
  Write(ws.VocabFile(), TrainBpe(sentences, c.vocab_size).Serialize());
}

void RunTrainLm(const RunConfig& c, const std::function<void(long, double)>& on_step) {
  c.Validate();
  const Workspace ws(c.workdir);
  const auto sentences = LoadSentences(ws.TrainText());
  const Vocab vocab = LoadVocab(ws);
  ModelConfig mc = c.model;
  mc.vocab_size = vocab.size();
  mc.seed = StageSeed(c, "lm/init");
  LmTrainConfig lc = c.lm;
  lc.seed = StageSeed(c, "lm/batches");
  const auto seqs = EncodeSentences(vocab, sentences);
  for (const auto& s : seqs)
    if (static_cast<int>(s.size()) > mc.max_context)
      Fail(ErrorKind::kConfig, "a training sentence exceeds model.max_context");
  auto model = Model<float>::Initialized(mc);
  const auto result = TrainLm(model, seqs, lc, on_step);
  SaveModel(model, ws.LmDir());
  Write(ws.LmLoss(), CurveTable("loss", result.loss_curve));
}

void RunTrainTc(const RunConfig& c) {
  c.Validate();
  const Workspace ws(c.workdir);
  const auto sentences = LoadSentences(ws.TrainText());
  const Vocab vocab = LoadVocab(ws);
  const auto model = LoadLm(ws);
  for (int l : c.tc_layers)
    if (l >= model.config().n_layers)
      Fail(ErrorKind::kConfig, "transcoder layer " + std::to_string(l) + " exceeds the model");
  const auto layers = c.tc_layers.empty() ? AllLayers(model.config().n_layers) : c.tc_layers;
  const auto data = CollectMlpData(model, EncodeSentences(vocab, sentences));
  const int d = model.config().d_model;
  for (int l : layers) {
    const std::string tag = "tc/layer" + std::to_string(l);
    auto tc = Transcoder<float>::Initialized(l, d, c.tc.expansion_factor * d,
                                             StageSeed(c, tag + "/init"));
    TranscoderTrainConfig tcfg = c.tc;
    tcfg.seed = StageSeed(c, tag + "/batches");
    const auto result = TrainTranscoder(tc, data[l].inputs, data[l].targets, tcfg);
    SaveTranscoder(tc, ws.TcDir(l));
    Write(ws.TcStats(l), FormatStatsTable(result.stats));
    std::ostringstream os;
    os << "step\tloss\tmse\n";
    for (size_t i = 0; i < result.loss_curve.size(); ++i)
      os << i << '\t' << FormatDouble(result.loss_curve[i]) << '\t'
         << FormatDouble(result.mse_curve[i]) << '\n';
    Write(ws.TcLoss(l), os.str());
  }
}

ModeComparison RunEval(const RunConfig& c) {
  c.Validate();
  const Workspace ws(c.workdir);
  const auto val = LoadSentences(ws.ValText());
  const Vocab vocab = LoadVocab(ws);
  const auto model = LoadLm(ws);
  const int n_layers = model.config().n_layers;
  const auto tcs = LoadTranscoders(ws, AllLayers(n_layers));
  const auto seqs = EncodeSentences(vocab, val);

  const auto modes = CompareModes<float>(model, tcs, seqs);
  Write(ws.ModesTable(), FormatModeTable(modes));

  const auto data = CollectMlpData(model, seqs);
  const auto l0 = L0ByLayer<float>(tcs, data);
  Write(ws.L0Table(), FormatL0Table(l0));
  for (int l = 0; l < n_layers; ++l)
    Write(ws.Histogram(l), FormatHistogram(LiveFeatureHistogram(ComputeStats(tcs[l], data[l].inputs))));

  int correct = 0;
  for (const auto& s : val)
    if (PredictCellType(model, vocab, PromptPrefix(s)) == ExtractLabel(s)) ++correct;
  std::ostringstream os;
  os << "n_cells\tcorrect\taccuracy\n"
     << val.size() << '\t' << correct << '\t'
     << FormatDouble(val.empty() ? 0.0 : static_cast<double>(correct) / val.size()) << '\n';
  Write(ws.Accuracy(), os.str());
  return modes;
}

void RunFeatures(const RunConfig& c, const std::vector<int>& features) {
  c.Validate();
  const Workspace ws(c.workdir);
  const auto sentences = LoadSentences(ws.TrainText());
  const Vocab vocab = LoadVocab(ws);
  const auto model = LoadLm(ws);
  const auto layers = c.tc_layers.empty() ? AllLayers(model.config().n_layers) : c.tc_layers;
  const auto tcs = LoadTranscoders(ws, layers);
  for (size_t i = 0; i < layers.size(); ++i) {
    std::vector<int> ids = features;
    for (int f : ids)
      if (f < 0 || f >= tcs[i].hidden())
        Fail(ErrorKind::kInput, "feature " + std::to_string(f) + " out of range");
    const bool all_live = ids.empty();
    if (all_live) ids = AllLayers(tcs[i].hidden());
    auto reports = FeatureReports(model, tcs[i], vocab, sentences, ids, c.feature_contexts);
    if (all_live)
      std::erase_if(reports, [](const FeatureReport& r) { return !(r.log10_ef >= -4.0); });
    Write(ws.FeaturesTable(layers[i]), FormatFeatureReports(reports));
  }
}

Artifacts LoadArtifacts(const RunConfig& c, bool need_transcoders) {
  const Workspace ws(c.workdir);
  Require(ws.Markers(), "gen-corpus");
  Vocab vocab = LoadVocab(ws);
  auto model_f = LoadLm(ws);
  auto model = model_f.Cast<double>();
  Artifacts a{std::move(vocab),
              ParseMarkers(ReadFile(ws.Markers())),
              LoadSentences(ws.TrainText()),
              std::move(model_f),
              std::move(model),
              {},
              {}};
  if (need_transcoders) {
    a.tcs_f = LoadTranscoders(ws, AllLayers(a.model.config().n_layers));
    for (const auto& t : a.tcs_f) a.tcs.push_back(t.Cast<double>());
  }
  return a;
}

PreparedPrompt PreparePrompt(const Artifacts& a, const std::string& prompt) {
  if (a.tcs.size() != static_cast<size_t>(a.model.config().n_layers))
    Fail(ErrorKind::kState, "tracing needs a transcoder for every layer; run `cellcircuit train-tc`");
  std::string text = prompt;
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  if (Trim(text).empty()) Fail(ErrorKind::kInput, "prompt is empty");
  PreparedPrompt p;
  p.prompt = text;
  p.ids = EncodeWithBos(a.vocab, text);
  if (static_cast<int>(p.ids.size()) > a.model.config().max_context)
    Fail(ErrorKind::kInput, "prompt has " + std::to_string(p.ids.size()) +
                                " tokens; the context window holds " +
                                std::to_string(a.model.config().max_context));
  p.predicted = PredictCellType(a.model, a.vocab, text);
  const auto genes = TokenGenes(a.vocab, p.ids);
  for (size_t t = 0; t < p.ids.size(); ++t)
    p.tokens.push_back({a.vocab.is_special(p.ids[t]) ? "<bos>" : a.vocab.token_bytes(p.ids[t]),
                        genes[t]});
  auto out = Forward(a.model, p.ids, ExecutionMode<double>::Replaced(a.tcs), true);
  p.session = std::make_shared<const TraceSession>(std::move(*out.trace));
  return p;
}

FeatureNode ParseTarget(const Artifacts& a, const PreparedPrompt& p, const std::string& spec) {
  const int n_layers = a.model.config().n_layers;
  const int last = static_cast<int>(p.ids.size()) - 1;
  auto label_logit = [&](const std::string& label) {
    if (Trim(label).empty()) Fail(ErrorKind::kInput, "target label is empty");
    const auto ids = a.vocab.Encode(" " + std::string(Trim(label)));
    return FeatureNode::Logit(n_layers, ids.front(), last);
  };
  if (spec == "logit") {
    if (p.predicted.empty())
      Fail(ErrorKind::kInput, "the model predicts no label; name one with logit:<label>");
    return label_logit(p.predicted);
  }
  if (spec.rfind("logit:", 0) == 0) return label_logit(spec.substr(6));
  FeatureNode node;
  try {
    node = FeatureNode::Parse(spec);
  } catch (const Error&) {
    Fail(ErrorKind::kInput, "bad target '" + spec + "'; use logit, logit:<label> or a node id");
  }
  if (!node.expandable())
    Fail(ErrorKind::kInput, "target must be a feature or a logit node");
  return node;
}

TraceResult TraceCircuit(const Artifacts& a, const PreparedPrompt& p, const std::string& target,
                         const ExtractionParams& params) {
  const AttributionContext ctx(a.model, a.tcs, *p.session);
  TraceResult r;
  r.target = ParseTarget(a, p, target);
  ctx.CheckNode(r.target);
  r.graph = ExtractCircuit(ctx, r.target, params, p.tokens);
  r.text = "# prompt\t" + EscapeBytes(p.prompt) + "\n# predicted\t" + p.predicted +
           "\n# target\t" + target + "\n" + ExportText(r.graph);
  r.dot = ExportDot(r.graph);
  return r;
}

std::string RunTrace(const RunConfig& c, const std::string& prompt, const std::string& target,
                     const std::string& name) {
  c.Validate();
  const Workspace ws(c.workdir);
  const auto a = LoadArtifacts(c);
  const auto p = PreparePrompt(a, prompt);
  const auto r = TraceCircuit(a, p, target, c.trace);
  const std::string stem = ws.TracesDir() + "/" + name;
  Write(stem + ".txt", r.text);
  Write(stem + ".dot", r.dot);
  return stem + ".txt";
}

}  // namespace cellcircuit
