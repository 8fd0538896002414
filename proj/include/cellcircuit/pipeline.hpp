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

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cellcircuit/attribution.hpp"
#include "cellcircuit/circuit.hpp"
#include "cellcircuit/config.hpp"
#include "cellcircuit/corpus.hpp"
#include "cellcircuit/eval.hpp"
#include "cellcircuit/model.hpp"
#include "cellcircuit/tokenizer.hpp"
#include "cellcircuit/transcoder.hpp"

namespace cellcircuit {

// Artifact layout under the workdir.
struct Workspace {
  std::string root;

  explicit Workspace(std::string dir) : root(std::move(dir)) {}

  std::string Expression() const { return root + "/corpus/expression.csv"; }
  std::string TrainText() const { return root + "/corpus/train.txt"; }
  std::string ValText() const { return root + "/corpus/val.txt"; }
  std::string Markers() const { return root + "/corpus/markers.tsv"; }
  std::string VocabFile() const { return root + "/vocab.txt"; }
  std::string LmDir() const { return root + "/lm"; }
  std::string LmLoss() const { return root + "/lm_loss.tsv"; }
  std::string TcDir(int layer) const { return root + "/tc/layer" + std::to_string(layer); }
  std::string TcStats(int layer) const { return TcDir(layer) + "_stats.tsv"; }
  std::string TcLoss(int layer) const { return TcDir(layer) + "_loss.tsv"; }
  std::string EvalDir() const { return root + "/eval"; }
  std::string ModesTable() const { return EvalDir() + "/modes.tsv"; }
  std::string L0Table() const { return EvalDir() + "/l0.tsv"; }
  std::string Histogram(int layer) const {
    return EvalDir() + "/histogram_layer" + std::to_string(layer) + ".tsv";
  }
  std::string Accuracy() const { return EvalDir() + "/accuracy.tsv"; }
  std::string FeaturesTable(int layer) const {
    return root + "/features/layer" + std::to_string(layer) + ".tsv";
  }
  std::string TracesDir() const { return root + "/traces"; }
};

// Labelled sentences, one per line, as written by RunGenCorpus.
std::vector<std::string> LoadSentences(const std::string& path);

// BOS + encode(sentence + "\n") for each sentence.
std::vector<std::vector<int>> EncodeSentences(const Vocab& vocab,
                                              const std::vector<std::string>& sentences);

// Each stage reads the artifacts of the ones before it. A missing input is a
// kState error naming the command that produces it.
void RunGenCorpus(const RunConfig& c);
void RunTrainBpe(const RunConfig& c);
void RunTrainLm(const RunConfig& c, const std::function<void(long, double)>& on_step = {});
void RunTrainTc(const RunConfig& c);
ModeComparison RunEval(const RunConfig& c);
// Empty `features`: every live feature of each layer.
void RunFeatures(const RunConfig& c, const std::vector<int>& features = {});

// Everything tracing and serving read. The double copies feed attribution.
struct Artifacts {
  Vocab vocab;
  std::vector<MarkerSet> markers;
  std::vector<std::string> train_sentences;
  Model<float> model_f;
  Model<double> model;
  std::vector<Transcoder<float>> tcs_f;  // one per layer, layer order
  std::vector<Transcoder<double>> tcs;
};

Artifacts LoadArtifacts(const RunConfig& c, bool need_transcoders = true);

// A prompt run through the transcoder-replaced model in capture mode.
struct PreparedPrompt {
  std::string prompt;
  std::string predicted;  // greedy completion of the original model
  std::vector<int> ids;
  std::vector<TokenInfo> tokens;
  std::shared_ptr<const TraceSession> session;
};

// kInput for an empty prompt or one longer than the context window.
PreparedPrompt PreparePrompt(const Artifacts& a, const std::string& prompt);

// "logit" (the predicted label), "logit:<label>" (first token of " label"),
// or a node id such as "F:2:117@14" or "L:4:330@27". Logit targets read the
// final position.
FeatureNode ParseTarget(const Artifacts& a, const PreparedPrompt& p, const std::string& spec);

struct TraceResult {
  FeatureNode target;
  CircuitGraph graph;
  std::string text;  // '#' header lines, then the circuit text format
  std::string dot;
};

TraceResult TraceCircuit(const Artifacts& a, const PreparedPrompt& p, const std::string& target,
                         const ExtractionParams& params);

// Writes <TracesDir>/<name>.txt and .dot; returns the .txt path.
std::string RunTrace(const RunConfig& c, const std::string& prompt, const std::string& target,
                     const std::string& name = "trace");

}  // namespace cellcircuit
