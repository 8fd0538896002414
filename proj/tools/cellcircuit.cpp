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

// Command-line front end. Talks to the library only through the C API.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cellcircuit/cellcircuit.h"

namespace {

struct Failure {
  cc_status status;
};

void Check(cc_status s) {
  if (s != CC_OK) throw Failure{s};
}

std::string Take(char* s) {
  std::string out = s ? s : "";
  cc_string_free(s);
  return out;
}

std::string Join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Flags {
  std::string config_path;
  std::optional<std::string> workdir;
  std::optional<std::string> seed;
  std::vector<int> layers;
  std::optional<std::string> lambda;
  std::string target = "logit";
  std::optional<int> topk;
  std::optional<std::string> threshold;
  std::optional<int> depth;
  std::optional<int> max_nodes;
  std::optional<int> port;
  std::string host = "127.0.0.1";
  std::string prompt;
  std::string prompt_file;
  std::string name = "trace";
  std::vector<int> ids;
};

class Config {
 public:
  explicit Config(const Flags& f) {
    if (f.config_path.empty())
      Check(cc_config_new(&c_));
    else
      Check(cc_config_load(f.config_path.c_str(), &c_));
    if (f.workdir) Set("", "workdir", *f.workdir);
    if (f.seed) Set("", "seed", *f.seed);
    if (!f.layers.empty()) Set("train_tc", "layers", Join(f.layers));
    if (f.lambda) Set("train_tc", "l1_coefficient", *f.lambda);
    if (f.topk) Set("trace", "top_k", std::to_string(*f.topk));
    if (f.threshold) Set("trace", "threshold", *f.threshold);
    if (f.depth) Set("trace", "max_depth", std::to_string(*f.depth));
    if (f.max_nodes) Set("trace", "max_nodes", std::to_string(*f.max_nodes));
    if (f.port) Set("serve", "port", std::to_string(*f.port));
  }
  ~Config() { cc_config_free(c_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  const cc_config* get() const { return c_; }
  std::string Get(const char* section, const char* key) const {
    char* s = nullptr;
    Check(cc_config_get(c_, section, key, &s));
    return Take(s);
  }

 private:
  void Set(const char* section, const char* key, const std::string& value) {
    Check(cc_config_set(c_, section, key, value.c_str()));
  }
  cc_config* c_ = nullptr;
};

std::string ReadPrompt(const Flags& f) {
  if (!f.prompt.empty()) return f.prompt;
  std::ostringstream os;
  if (f.prompt_file.empty() || f.prompt_file == "-") {
    os << std::cin.rdbuf();
  } else {
    std::ifstream in(f.prompt_file, std::ios::binary);
    if (!in) {
      std::fprintf(stderr, "error: cannot read prompt file %s\n", f.prompt_file.c_str());
      throw Failure{CC_ERR_IO};
    }
    os << in.rdbuf();
  }
  return os.str();
}

cc_server* g_server = nullptr;

void OnSignal(int) {
  if (g_server) cc_server_stop(g_server);
}

void Progress(long step, double loss, void*) {
  if (step % 50 == 0) std::printf("step %ld loss %.4f\n", step, loss);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transcoder circuit tracing on a toy cell-sentence model"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--workdir", f.workdir, "artifact directory");
  app.add_option("--seed", f.seed, "root seed");

  auto* show = app.add_subcommand("show-config", "print the effective configuration");
  auto* gen = app.add_subcommand("gen-corpus", "synthetic expression matrix, sentences, markers");
  auto* bpe = app.add_subcommand("train-bpe", "byte-pair vocabulary from the training sentences");
  auto* lm = app.add_subcommand("train-lm", "train the language model");
  auto* tc = app.add_subcommand("train-tc", "train one transcoder per layer");
  tc->add_option("--layers", f.layers, "layers to train (default all)")->delimiter(',');
  tc->add_option("--lambda", f.lambda, "L1 sparsity coefficient");
  auto* ev = app.add_subcommand("eval", "mode comparison, L0, histograms, accuracy");
  auto* feat = app.add_subcommand("features", "top-activating contexts per feature");
  feat->add_option("--layers", f.layers, "layers (default all)")->delimiter(',');
  feat->add_option("--ids", f.ids, "feature ids (default every live feature)")->delimiter(',');
  auto* tr = app.add_subcommand("trace", "extract a circuit for a prompt");
  tr->add_option("prompt_file", f.prompt_file, "prompt file, '-' or omitted for stdin");
  tr->add_option("--prompt", f.prompt, "prompt text");
  tr->add_option("--target", f.target,
                 "logit, logit:<label> or a node id such as F:2:117@14")
      ->capture_default_str();
  tr->add_option("--topk", f.topk, "edges kept per expanded node");
  tr->add_option("--threshold", f.threshold, "absolute edge threshold, or auto");
  tr->add_option("--depth", f.depth, "maximum hops from the target");
  tr->add_option("--max-nodes", f.max_nodes, "node cap");
  tr->add_option("--name", f.name, "output name under <workdir>/traces")->capture_default_str();
  auto* sv = app.add_subcommand("serve", "HTTP trace service");
  sv->add_option("--port", f.port, "port (default 7731)");
  sv->add_option("--host", f.host, "bind address")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const Config config(f);
    const std::string workdir = config.Get("", "workdir");
    if (show->parsed()) {
      char* text = nullptr;
      Check(cc_config_format(config.get(), &text));
      std::printf("%s", Take(text).c_str());
    } else if (gen->parsed()) {
      Check(cc_gen_corpus(config.get()));
      std::printf("wrote %s/corpus\n", workdir.c_str());
    } else if (bpe->parsed()) {
      Check(cc_train_bpe(config.get()));
      std::printf("wrote %s/vocab.txt\n", workdir.c_str());
    } else if (lm->parsed()) {
      Check(cc_train_lm(config.get(), Progress, nullptr));
      std::printf("wrote %s/lm\n", workdir.c_str());
    } else if (tc->parsed()) {
      Check(cc_train_tc(config.get()));
      std::printf("wrote %s/tc\n", workdir.c_str());
    } else if (ev->parsed()) {
      char* table = nullptr;
      Check(cc_eval(config.get(), &table));
      std::printf("%s", Take(table).c_str());
      std::printf("wrote %s/eval\n", workdir.c_str());
    } else if (feat->parsed()) {
      Check(cc_features(config.get(), f.ids.data(), f.ids.size()));
      std::printf("wrote %s/features\n", workdir.c_str());
    } else if (tr->parsed()) {
      const std::string prompt = ReadPrompt(f);
      char* path = nullptr;
      Check(cc_trace(config.get(), prompt.c_str(), f.target.c_str(), f.name.c_str(), &path));
      const std::string txt = Take(path);
      std::ifstream in(txt);
      std::string line;
      while (std::getline(in, line) && !line.empty() && line[0] == '#')
        std::printf("%s\n", line.c_str());
      std::printf("wrote %s\n", txt.c_str());
    } else if (sv->parsed()) {
      int port = 0;
      const int configured = std::stoi(config.Get("serve", "port"));
      Check(cc_server_start(config.get(), f.host.c_str(), configured, &g_server, &port));
      std::signal(SIGINT, OnSignal);
      std::signal(SIGTERM, OnSignal);
      std::printf("serving on http://%s:%d\n", f.host.c_str(), port);
      std::fflush(stdout);
      Check(cc_server_wait(g_server));
      cc_server_free(g_server);
      g_server = nullptr;
    }
  } catch (const Failure& e) {
    if (e.status != CC_ERR_IO || *cc_last_error())
      std::fprintf(stderr, "error (%s): %s\n", cc_status_name(e.status), cc_last_error());
    return static_cast<int>(e.status);
  }
  return 0;
}
