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

// End-to-end acceptance run: trains the default toy pipeline twice from
// scratch and prints one PASS/FAIL line per criterion A1..A8.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cellcircuit/checkpoint.hpp"
#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"
#include "cellcircuit/pipeline.hpp"
#include "cellcircuit/rng.hpp"
#include "micro_model.hpp"
#include "test_util.hpp"

namespace cellcircuit {
namespace {

namespace fs = std::filesystem;
using testing_util::RelativeError;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// Both runs share everything except the directory.
struct Runs {
  RunConfig first, second;
  ModeComparison modes;
  double pipeline_seconds = 0.0;
};

const std::vector<int> kFeatureIds = {0, 1, 2, 3, 4, 5, 6, 7};
const char* kTracePrompt =
    "KIAA1217 VWF MT-CO1 FOXN3 PTPRB ENG SPARCL1 MGLL. The corresponding cell type is:";

ModeComparison RunPipeline(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunGenCorpus(c);
  RunTrainBpe(c);
  RunTrainLm(c);
  std::printf("  [%s] language model trained (%.0f s)\n", c.workdir.c_str(), Seconds(t0));
  RunTrainTc(c);
  std::printf("  [%s] transcoders trained (%.0f s)\n", c.workdir.c_str(), Seconds(t0));
  const auto modes = RunEval(c);
  RunFeatures(c, kFeatureIds);
  RunTrace(c, kTracePrompt, "logit", "acceptance");
  std::printf("  [%s] done (%.0f s)\n", c.workdir.c_str(), Seconds(t0));
  std::fflush(stdout);
  return modes;
}

// Strict orderings of the three validation losses, with the replaced model
// closing more than half of the ablation gap.
Outcome A1(const Runs& r) {
  const auto& m = r.modes;
  const bool order = m.loss_original < m.loss_replaced && m.loss_replaced < m.loss_ablated;
  const bool gap = m.loss_replaced - m.loss_original < 0.5 * (m.loss_ablated - m.loss_original);
  const bool timed = r.pipeline_seconds > 0.0;
  const bool budget = !timed || r.pipeline_seconds <= 1800.0;
  return {order && gap && budget,
          "val_loss original " + Fmt("%.4f", m.loss_original) + ", replaced " +
              Fmt("%.4f", m.loss_replaced) + ", ablated " + Fmt("%.4f", m.loss_ablated) +
              (timed ? "; one pipeline run " + Fmt("%.0f", r.pipeline_seconds) + " s"
                     : "; reused artifacts, runtime not measured")};
}

Outcome A2(const Runs& r) {
  const auto& m = r.modes;
  // KL of the original model against an independent second forward pass.
  const auto a = LoadArtifacts(r.first, false);
  const auto val = LoadSentences(Workspace(r.first.workdir).ValText());
  const auto seqs = EncodeSentences(a.vocab, val);
  double self = 0.0;
  long n = 0;
  for (size_t i = 0; i < seqs.size(); i += 10) {
    const auto p = Forward(a.model_f, seqs[i], ExecutionMode<float>::Original(), false).logits;
    const auto q = Forward(a.model_f, seqs[i], ExecutionMode<float>::Original(), false).logits;
    for (long t = 0; t < p.rows(); ++t, ++n) self += SoftmaxKl(p.row(t), q.row(t));
  }
  self /= std::max(1L, n);
  const bool pass = m.kl_replaced < m.kl_ablated && m.kl_replaced >= 0 && m.kl_ablated >= 0 &&
                    self < 1e-9;
  return {pass, "KL replaced " + Fmt("%.4g", m.kl_replaced) + ", ablated " +
                    Fmt("%.4g", m.kl_ablated) + ", original vs itself " + Fmt("%.1e", self)};
}

// Central differences on double-precision instances with d_model <= 8.
Outcome A3() {
  double worst_lm = 0.0, worst_tc = 0.0;
  int groups = 0;
  {
    const auto cfg = testing_util::MicroConfig(2, 2);
    auto model = testing_util::RandomModel(cfg, 3, 0.5);
    const std::vector<int> ids = {1, 4, 9, 2, 7, 3};
    std::vector<double> grad(model.params().size(), 0.0);
    LossAndGradient<double>(model, ids, grad, 1.0);
    const double h = 1e-4;
    for (const auto& spec : model.layout().specs) {
      for (size_t i = 0; i < spec.numel(); ++i) {
        double& p = model.params()[spec.offset + i];
        const double saved = p;
        p = saved + h;
        const double up = SequenceLoss(model, ids, ExecutionMode<double>::Original());
        p = saved - h;
        const double down = SequenceLoss(model, ids, ExecutionMode<double>::Original());
        p = saved;
        worst_lm = std::max(worst_lm, RelativeError(grad[spec.offset + i], (up - down) / (2 * h)));
      }
      ++groups;
    }
  }
  {
    Transcoder<double> tc(0, 4, 8);
    Rng rng(15);
    for (auto& p : tc.params()) p = rng.Normal();
    Mat<double> x(6, 4), y(6, 4);
    for (long i = 0; i < x.size(); ++i) x.data()[i] = rng.Normal(), y.data()[i] = rng.Normal();
    std::vector<double> grad(tc.params().size());
    LossAndGradient<double>(tc, x, y, 0.3, grad);
    const double h = 1e-5;
    for (const auto& spec : tc.specs()) {
      for (size_t i = 0; i < spec.numel(); ++i) {
        double& p = tc.params()[spec.offset + i];
        const double saved = p;
        p = saved + h;
        const double up = ComputeLoss(tc, x, y, 0.3).total;
        p = saved - h;
        const double down = ComputeLoss(tc, x, y, 0.3).total;
        p = saved;
        worst_tc = std::max(worst_tc, RelativeError(grad[spec.offset + i], (up - down) / (2 * h)));
      }
      ++groups;
    }
  }
  return {worst_lm < 1e-4 && worst_tc < 1e-4,
          "worst relative error LM " + Fmt("%.1e", worst_lm) + ", transcoder " +
              Fmt("%.1e", worst_tc) + " over " + std::to_string(groups) + " parameter groups"};
}

// Live final-layer features on 20 validation prompts: all of them at the
// final position, and every position where they fire.
Outcome A4(const RunConfig& c, const Artifacts& a) {
  const Workspace ws(c.workdir);
  const int last = a.model.config().n_layers - 1;
  const auto train = EncodeSentences(a.vocab, a.train_sentences);
  const auto data = CollectMlpData(a.model_f, train);
  const auto live = ComputeStats(a.tcs_f[last], data[last].inputs).LiveFeatures();
  const auto val = LoadSentences(ws.ValText());

  double worst = 0.0;
  long checked = 0, error_edges = 0, nonzero_error = 0;
  for (size_t i = 0; i < 20 && i < val.size(); ++i) {
    const auto p = PreparePrompt(a, PromptPrefix(val[i]));
    const AttributionContext ctx(a.model, a.tcs, *p.session);
    const int n = ctx.n_tokens();
    for (int t = 0; t < n; ++t)
      for (int f : live) {
        const auto node = FeatureNode::Feature(last, f, t);
        if (t != n - 1 && ctx.Activation(node) <= 0) continue;
        const auto edges = DecomposeFeature(ctx, node);
        for (const auto& e : edges)
          if (e.src.kind == NodeKind::kError) ++error_edges, nonzero_error += e.value != 0.0;
        const double pre = ctx.PreActivation(node);
        worst = std::max(worst, std::abs(CompletenessResidual(ctx, node, edges)) /
                                    std::max(std::abs(pre), 1e-6));
        ++checked;
      }
  }
  return {checked > 0 && worst < 1e-4 && nonzero_error == 0,
          std::to_string(live.size()) + " live features, " + std::to_string(checked) +
              " nodes, worst relative residual " + Fmt("%.1e", worst) + ", " +
              std::to_string(nonzero_error) + " nonzero of " + std::to_string(error_edges) +
              " error edges"};
}

// Same protocol as the circuit unit test, on fresh seeds.
Outcome A5() {
  Rng rng(77);
  int instances = 0, matches = 0;
  for (int k = 0; k < 24; ++k) {
    const int layers = 1 + static_cast<int>(rng.Below(3));
    const int hidden = 9 + static_cast<int>(rng.Below(8));  // must exceed d_model = 8
    const int n_tokens = 2 + static_cast<int>(rng.Below(7));
    const auto cfg = testing_util::MicroConfig(layers, 2);
    const auto model = testing_util::RandomModel(cfg, 5000 + k, 0.5);
    const auto tcs = testing_util::RandomTranscoders(cfg, hidden, 6000 + k);
    std::vector<int> ids;
    for (int t = 0; t < n_tokens; ++t) ids.push_back(static_cast<int>(rng.Below(11)));
    const auto session = *Forward(model, ids, ExecutionMode<double>::Replaced(tcs), true).trace;
    const AttributionContext ctx(model, tcs, session);
    const auto target = FeatureNode::Logit(layers, static_cast<int>(rng.Below(11)), n_tokens - 1);
    ExtractionParams p;
    p.top_k = 1 + static_cast<int>(rng.Below(4));
    p.max_depth = 1 + static_cast<int>(rng.Below(4));
    p.relative_threshold = 0.02 * rng.Uniform();
    p.max_nodes = 100000;
    const auto g = ExtractCircuit(ctx, target, p);
    matches += g.NodeSet() == PathNodeSet(BruteForcePaths(ctx, target, p), p.max_nodes);
    ++instances;
  }
  return {instances >= 20 && matches == instances,
          std::to_string(matches) + "/" + std::to_string(instances) + " micro-instances match"};
}

// Top five gene-token features by total attribution to the predicted-label
// logit; a feature counts when most of its top-10 training contexts sit on
// the cell type's planted markers. Each trace needs two such features.
// Pinned on the first successful run: 10 of 10 traces pass.
Outcome A6(const RunConfig& c, const Artifacts& a) {
  constexpr int kPinnedPassingTraces = 10;
  const auto val = LoadSentences(Workspace(c.workdir).ValText());
  std::map<std::string, std::set<std::string>> markers;
  for (const auto& m : a.markers) markers[m.cell_type] = {m.genes.begin(), m.genes.end()};

  // Ten cells, round-robin over types in validation order.
  std::map<std::string, std::vector<size_t>> by_type;
  for (size_t i = 0; i < val.size(); ++i) by_type[ExtractLabel(val[i])].push_back(i);
  std::vector<size_t> picked;
  for (size_t round = 0; picked.size() < 10 && round < val.size(); ++round)
    for (const auto& [type, cells] : by_type)
      if (round < cells.size() && picked.size() < 10) picked.push_back(cells[round]);

  struct Trace {
    std::string truth, predicted;
    std::vector<FeatureNode> top;
  };
  std::vector<Trace> traces;
  std::map<int, std::set<int>> wanted;  // layer -> features
  for (size_t i : picked) {
    const auto p = PreparePrompt(a, PromptPrefix(val[i]));
    const AttributionContext ctx(a.model, a.tcs, *p.session);
    Trace tr{ExtractLabel(val[i]), p.predicted, {}};
    for (const auto& [node, total] : TotalsBySource(DecomposeNode(ctx, ParseTarget(a, p, "logit")))) {
      if (node.kind != NodeKind::kFeature || p.tokens[node.position].gene.empty()) continue;
      tr.top.push_back(node);
      wanted[node.layer].insert(node.index);
      if (tr.top.size() == 5) break;
    }
    traces.push_back(std::move(tr));
  }

  std::map<std::pair<int, int>, FeatureReport> reports;
  for (const auto& [layer, ids] : wanted) {
    const std::vector<int> v(ids.begin(), ids.end());
    for (auto& r : FeatureReports(a.model_f, a.tcs_f[layer], a.vocab, a.train_sentences, v, 10))
      reports[{layer, r.feature}] = std::move(r);
  }

  int passing = 0;
  std::string counts;
  for (const auto& tr : traces) {
    int good = 0;
    for (const auto& n : tr.top) {
      const auto& rep = reports.at({n.layer, n.index});
      int inside = 0;
      for (const auto& ctx : rep.contexts) inside += markers[tr.truth].count(ctx.gene);
      good += 2 * inside > static_cast<int>(rep.contexts.size());
    }
    passing += good >= 2;
    counts += (counts.empty() ? "" : ",") + std::to_string(good);
  }
  return {passing == static_cast<int>(traces.size()) && passing >= kPinnedPassingTraces,
          std::to_string(passing) + "/" + std::to_string(traces.size()) +
              " traces with >= 2 marker features (per trace: " + counts + ")"};
}

// Retrains the first and last layers at 10x the L1 coefficient with the
// pipeline's own seeds and compares against the saved transcoders.
Outcome A7(const RunConfig& c, const Artifacts& a) {
  const auto data = CollectMlpData(a.model_f, EncodeSentences(a.vocab, a.train_sentences));
  const int n_layers = a.model.config().n_layers;
  bool pass = true;
  std::string detail;
  for (int l : {0, n_layers - 1}) {
    const std::string tag = "tc/layer" + std::to_string(l);
    const int d = a.model.config().d_model;
    auto tc = Transcoder<float>::Initialized(l, d, c.tc.expansion_factor * d, StageSeed(c, tag + "/init"));
    TranscoderTrainConfig cfg = c.tc;
    cfg.seed = StageSeed(c, tag + "/batches");
    cfg.l1_coefficient *= 10.0;
    const auto high = TrainTranscoder(tc, data[l].inputs, data[l].targets, cfg).stats;
    const auto base = ComputeStats(a.tcs_f[l], data[l].inputs);
    pass = pass && high.mean_l0 < base.mean_l0;
    detail += "layer " + std::to_string(l) + " L0 " + Fmt("%.2f", base.mean_l0) + " -> " +
              Fmt("%.2f", high.mean_l0) + "; ";
  }
  float min_z = 0.0f;
  size_t min_live = SIZE_MAX;
  for (int l = 0; l < n_layers; ++l) {
    min_z = std::min(min_z, a.tcs_f[l].Encode(data[l].inputs).minCoeff());
    min_live = std::min(min_live, ComputeStats(a.tcs_f[l], data[l].inputs).LiveFeatures().size());
  }
  pass = pass && min_z >= 0.0f && min_live > 0;
  return {pass, detail + "min z " + Fmt("%g", min_z) + ", fewest live features in a layer " +
                    std::to_string(min_live)};
}

std::vector<std::string> FilesUnder(const std::string& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

Outcome A8(const Runs& r, const Artifacts& a) {
  std::vector<std::string> problems;
  // Rerun identity over every artifact.
  const auto files = FilesUnder(r.first.workdir);
  if (files != FilesUnder(r.second.workdir)) problems.push_back("file lists differ");
  for (const auto& f : files)
    if (ReadFile(r.first.workdir + "/" + f) != ReadFile(r.second.workdir + "/" + f))
      problems.push_back(f + " differs");

  // Format round trips.
  const Workspace ws(r.first.workdir);
  const auto scratch = (fs::path(r.first.workdir) / "roundtrip").string();
  fs::create_directories(scratch);
  SaveModel(LoadModel(ws.LmDir()), scratch + "/lm");
  for (const char* f : {"config", "manifest", "weights.bin"})
    if (ReadFile(scratch + "/lm/" + f) != ReadFile(ws.LmDir() + "/" + f))
      problems.push_back(std::string("model checkpoint ") + f);
  SaveTranscoder(LoadTranscoder(ws.TcDir(0)), scratch + "/tc0");
  if (ReadFile(scratch + "/tc0/weights.bin") != ReadFile(ws.TcDir(0) + "/weights.bin"))
    problems.push_back("transcoder checkpoint");
  const std::string vocab = ReadFile(ws.VocabFile());
  if (Vocab::Deserialize(vocab).Serialize() != vocab) problems.push_back("vocab");
  const std::string csv = ReadFile(ws.Expression());
  if (FormatMatrixCsv(ParseMatrixCsv(csv)) != csv) problems.push_back("expression matrix");
  const std::string marker_text = ReadFile(ws.Markers());
  if (FormatMarkers(ParseMarkers(marker_text)) != marker_text) problems.push_back("markers");
  const std::string circuit = ReadFile(ws.TracesDir() + "/acceptance.txt");
  const auto graph = ImportText(circuit);
  if (ImportText(ExportText(graph)) != graph) problems.push_back("circuit graph");
  if (circuit.substr(circuit.find("cellcircuit-circuit")) != ExportText(graph))
    problems.push_back("circuit text");

  Rng rng(1000);
  int round_trips = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s(rng.Below(60), ' ');
    for (char& ch : s) ch = static_cast<char>(rng.Below(128));
    round_trips += a.vocab.Decode(a.vocab.Encode(s)) == s;
  }
  if (round_trips != 1000) problems.push_back("tokenizer round trips " + std::to_string(round_trips));

  std::string detail = std::to_string(files.size()) + " artifacts identical across runs; " +
                       "formats round-trip; " + std::to_string(round_trips) +
                       "/1000 tokenizer round trips";
  if (!problems.empty()) {
    detail = "problems:";
    for (size_t i = 0; i < problems.size() && i < 8; ++i) detail += " " + problems[i] + ";";
  }
  return {problems.empty(), detail};
}

void Report(const char* name, const std::function<Outcome()>& check, int& failures) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  failures += !o.pass;
  std::printf("%s %s: %s\n", name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace
}  // namespace cellcircuit

int main(int argc, char** argv) {
  using namespace cellcircuit;
  CLI::App app{"Acceptance run over the default toy pipeline"};
  std::string workdir = (fs::temp_directory_path() / "cellcircuit_acceptance").string();
  std::string config_path;
  bool keep = false, reuse = false;
  app.add_option("--workdir", workdir, "scratch directory (two runs are written under it)")
      ->capture_default_str();
  app.add_option("--config", config_path, "config file; defaults when omitted")
      ->check(CLI::ExistingFile);
  app.add_flag("--keep", keep, "leave the artifacts in place");
  app.add_flag("--reuse", reuse, "check artifacts kept by an earlier --keep run instead of training");
  CLI11_PARSE(app, argc, argv);

  Runs runs;
  int failures = 0;
  try {
    runs.first = config_path.empty() ? RunConfig() : LoadRunConfig(config_path);
    runs.first.workdir = workdir + "/run1";
    runs.second = runs.first;
    runs.second.workdir = workdir + "/run2";
    if (reuse) {
      keep = true;
      fs::remove_all(fs::path(runs.first.workdir) / "roundtrip");
      runs.modes = RunEval(runs.first);
    } else {
      fs::remove_all(workdir);
      const auto t0 = std::chrono::steady_clock::now();
      runs.modes = RunPipeline(runs.first);
      runs.pipeline_seconds = Seconds(t0);
      RunPipeline(runs.second);
    }
  } catch (const std::exception& e) {
    std::printf("pipeline error: %s\n", e.what());
    for (int i = 1; i <= 8; ++i) std::printf("A%d FAIL: pipeline did not complete\n", i);
    return 1;
  }

  const auto artifacts = LoadArtifacts(runs.first);
  Report("A1", [&] { return A1(runs); }, failures);
  Report("A2", [&] { return A2(runs); }, failures);
  Report("A3", [&] { return A3(); }, failures);
  Report("A4", [&] { return A4(runs.first, artifacts); }, failures);
  Report("A5", [&] { return A5(); }, failures);
  Report("A6", [&] { return A6(runs.first, artifacts); }, failures);
  Report("A7", [&] { return A7(runs.first, artifacts); }, failures);
  Report("A8", [&] { return A8(runs, artifacts); }, failures);
  if (!keep) fs::remove_all(workdir);
  return failures == 0 ? 0 : 1;
}
