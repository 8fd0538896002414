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

#include "cellcircuit/config.hpp"

#include <functional>
#include <sstream>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"
#include "cellcircuit/rng.hpp"

namespace cellcircuit {
namespace {

struct Entry {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view, const std::string&)> set;
};

template <typename F>
Entry Int(const char* s, const char* k, F field) {
  return {s, k, [=](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, std::string_view v, const std::string& w) {
            using V = std::remove_reference_t<decltype(field(c))>;
            field(c) = static_cast<V>(ParseInt(v, w));
          }};
}

template <typename F>
Entry Real(const char* s, const char* k, F field) {
  return {s, k, [=](const RunConfig& c) { return FormatDouble(field(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, std::string_view v, const std::string& w) {
            field(c) = ParseDouble(v, w);
          }};
}

const std::vector<Entry>& Entries() {
  static const std::vector<Entry> entries = {
      {"", "seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, std::string_view v, const std::string& w) { c.seed = ParseUint64(v, w); }},
      {"", "workdir", [](const RunConfig& c) { return c.workdir; },
       [](RunConfig& c, std::string_view v, const std::string&) { c.workdir = std::string(v); }},

      Int("corpus", "n_genes", [](RunConfig& c) -> auto& { return c.corpus.n_genes; }),
      Int("corpus", "n_cell_types", [](RunConfig& c) -> auto& { return c.corpus.n_cell_types; }),
      Int("corpus", "markers_per_type", [](RunConfig& c) -> auto& { return c.corpus.markers_per_type; }),
      Real("corpus", "marker_boost", [](RunConfig& c) -> auto& { return c.corpus.marker_boost; }),
      Int("corpus", "cells_per_type", [](RunConfig& c) -> auto& { return c.corpus.cells_per_type; }),
      Int("corpus", "sentence_length", [](RunConfig& c) -> auto& { return c.corpus.sentence_length; }),
      Real("corpus", "base_rate_min", [](RunConfig& c) -> auto& { return c.corpus.base_rate_min; }),
      Real("corpus", "base_rate_max", [](RunConfig& c) -> auto& { return c.corpus.base_rate_max; }),
      Real("corpus", "train_fraction", [](RunConfig& c) -> auto& { return c.train_fraction; }),

      Int("tokenizer", "vocab_size", [](RunConfig& c) -> auto& { return c.vocab_size; }),

      Int("model", "d_model", [](RunConfig& c) -> auto& { return c.model.d_model; }),
      Int("model", "n_layers", [](RunConfig& c) -> auto& { return c.model.n_layers; }),
      Int("model", "n_heads", [](RunConfig& c) -> auto& { return c.model.n_heads; }),
      Int("model", "d_mlp", [](RunConfig& c) -> auto& { return c.model.d_mlp; }),
      Int("model", "max_context", [](RunConfig& c) -> auto& { return c.model.max_context; }),

      Real("train_lm", "lr", [](RunConfig& c) -> auto& { return c.lm.lr; }),
      Int("train_lm", "batch_tokens", [](RunConfig& c) -> auto& { return c.lm.batch_tokens; }),
      Int("train_lm", "steps", [](RunConfig& c) -> auto& { return c.lm.steps; }),
      Real("train_lm", "warmup_frac", [](RunConfig& c) -> auto& { return c.lm.warmup_frac; }),
      Real("train_lm", "min_lr_ratio", [](RunConfig& c) -> auto& { return c.lm.min_lr_ratio; }),
      Real("train_lm", "grad_clip", [](RunConfig& c) -> auto& { return c.lm.grad_clip; }),

      Real("train_tc", "max_lr", [](RunConfig& c) -> auto& { return c.tc.max_lr; }),
      Int("train_tc", "tokens_per_batch", [](RunConfig& c) -> auto& { return c.tc.tokens_per_batch; }),
      Real("train_tc", "l1_coefficient", [](RunConfig& c) -> auto& { return c.tc.l1_coefficient; }),
      Int("train_tc", "expansion_factor", [](RunConfig& c) -> auto& { return c.tc.expansion_factor; }),
      Int("train_tc", "total_tokens", [](RunConfig& c) -> auto& { return c.tc.total_tokens; }),
      Real("train_tc", "warmup_frac", [](RunConfig& c) -> auto& { return c.tc.warmup_frac; }),
      {"train_tc", "layers",
       [](const RunConfig& c) {
         if (c.tc_layers.empty()) return std::string("all");
         std::string s;
         for (size_t i = 0; i < c.tc_layers.size(); ++i)
           s += (i ? "," : "") + std::to_string(c.tc_layers[i]);
         return s;
       },
       [](RunConfig& c, std::string_view v, const std::string& w) {
         c.tc_layers.clear();
         if (Trim(v) == "all") return;
         for (const auto& part : Split(v, ','))
           c.tc_layers.push_back(static_cast<int>(ParseInt(part, w)));
       }},

      Int("trace", "top_k", [](RunConfig& c) -> auto& { return c.trace.top_k; }),
      {"trace", "threshold",
       [](const RunConfig& c) {
         return c.trace.threshold ? FormatDouble(*c.trace.threshold) : std::string("auto");
       },
       [](RunConfig& c, std::string_view v, const std::string& w) {
         if (Trim(v) == "auto")
           c.trace.threshold.reset();
         else
           c.trace.threshold = ParseDouble(v, w);
       }},
      Real("trace", "relative_threshold", [](RunConfig& c) -> auto& { return c.trace.relative_threshold; }),
      Int("trace", "max_depth", [](RunConfig& c) -> auto& { return c.trace.max_depth; }),
      Int("trace", "max_nodes", [](RunConfig& c) -> auto& { return c.trace.max_nodes; }),
      {"trace", "priority",
       [](const RunConfig& c) {
         return std::string(c.trace.priority == PriorityMode::kMin ? "min" : "product");
       },
       [](RunConfig& c, std::string_view v, const std::string& w) {
         if (v == "min")
           c.trace.priority = PriorityMode::kMin;
         else if (v == "product")
           c.trace.priority = PriorityMode::kProduct;
         else
           Fail(ErrorKind::kConfig, w + ": priority must be 'min' or 'product'");
       }},

      Int("features", "contexts", [](RunConfig& c) -> auto& { return c.feature_contexts; }),

      Int("serve", "port", [](RunConfig& c) -> auto& { return c.port; }),
      Int("serve", "max_sessions", [](RunConfig& c) -> auto& { return c.max_sessions; }),
  };
  return entries;
}

}  // namespace

RunConfig::RunConfig() {
  // The LM reaches full held-out accuracy well inside 300 steps. The L1
  // weight is on the scale of the raw (unnormalized) MLP outputs here; at
  // 1.4e-4 features stay dense for any affordable token budget.
  lm.steps = 300;
  tc.l1_coefficient = 0.1;
  tc.max_lr = 2e-3;
  tc.total_tokens = 1000000;
}

std::vector<int> RunConfig::Layers() const {
  if (!tc_layers.empty()) return tc_layers;
  std::vector<int> all(model.n_layers);
  for (int l = 0; l < model.n_layers; ++l) all[l] = l;
  return all;
}

void RunConfig::Validate() const {
  corpus.Validate();
  model.Validate();
  lm.Validate();
  tc.Validate();
  trace.Validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    Fail(ErrorKind::kConfig, "train_fraction must lie strictly between 0 and 1");
  if (vocab_size < 258) Fail(ErrorKind::kConfig, "vocab_size must be at least 258");
  if (vocab_size > model.vocab_size)
    Fail(ErrorKind::kConfig, "model vocab_size smaller than the tokenizer vocabulary");
  for (int l : tc_layers)
    if (l < 0 || l >= model.n_layers)
      Fail(ErrorKind::kConfig, "transcoder layer " + std::to_string(l) + " out of range");
  if (feature_contexts < 0) Fail(ErrorKind::kConfig, "features.contexts must be >= 0");
  if (port < 0 || port > 65535) Fail(ErrorKind::kConfig, "port out of range");
  if (max_sessions < 1) Fail(ErrorKind::kConfig, "max_sessions must be >= 1");
}

void SetConfigValue(RunConfig& c, std::string_view section, std::string_view key,
                    std::string_view value, const std::string& where) {
  for (const auto& e : Entries()) {
    if (section == e.section && key == e.key) {
      try {
        e.set(c, Trim(value), where);
      } catch (const Error& err) {
        if (err.kind() == ErrorKind::kParse) Fail(ErrorKind::kConfig, err.what());
        throw;
      }
      // The tokenizer size is the model's vocabulary.
      if (section == "tokenizer" && key == "vocab_size") c.model.vocab_size = c.vocab_size;
      return;
    }
  }
  const std::string name = section.empty() ? std::string(key)
                                           : std::string(section) + "." + std::string(key);
  Fail(ErrorKind::kConfig, where + ": unknown key '" + name + "'");
}

std::string GetConfigValue(const RunConfig& c, std::string_view section, std::string_view key) {
  for (const auto& e : Entries())
    if (section == e.section && key == e.key) return e.get(c);
  Fail(ErrorKind::kConfig, "unknown key '" + std::string(section) + "." + std::string(key) + "'");
}

RunConfig ParseRunConfig(std::string_view text) {
  RunConfig c;
  std::string section;
  const auto lines = SplitLines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string where = "config line " + std::to_string(i + 1);
    std::string_view line = lines[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') Fail(ErrorKind::kConfig, where + ": unterminated section header");
      section = std::string(Trim(line.substr(1, line.size() - 2)));
      bool known = false;
      for (const auto& e : Entries()) known |= section == e.section && !section.empty();
      if (!known) Fail(ErrorKind::kConfig, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      Fail(ErrorKind::kConfig, where + ": expected 'key = value'");
    SetConfigValue(c, section, Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)), where);
  }
  c.Validate();
  return c;
}

RunConfig LoadRunConfig(const std::string& path) {
  if (!FileExists(path)) Fail(ErrorKind::kIo, "config file not found: " + path);
  return ParseRunConfig(ReadFile(path));
}

std::string FormatRunConfig(const RunConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& e : Entries()) {
    if (e.section != section) {
      section = e.section;
      os << "\n[" << section << "]\n";
    }
    os << e.key << " = " << e.get(c) << '\n';
  }
  return os.str();
}

uint64_t StageSeed(const RunConfig& c, std::string_view stage) {
  return SubstreamSeed(c.seed, stage);
}

}  // namespace cellcircuit
