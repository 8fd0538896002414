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

#include "cellcircuit/cellcircuit.h"

#include <cstring>
#include <memory>
#include <string>
#include <thread>

#include "cellcircuit/config.hpp"
#include "cellcircuit/error.hpp"
#include "cellcircuit/pipeline.hpp"
#include "cellcircuit/service.hpp"

struct cc_config {
  cellcircuit::RunConfig config;
};

struct cc_tracer {
  cellcircuit::RunConfig config;
  cellcircuit::Artifacts artifacts;
};

struct cc_server {
  std::unique_ptr<cellcircuit::TraceServer> server;
  std::thread thread;
};

namespace {

thread_local std::string g_last_error;

cc_status StatusOf(cellcircuit::ErrorKind kind) {
  using cellcircuit::ErrorKind;
  switch (kind) {
    case ErrorKind::kConfig: return CC_ERR_CONFIG;
    case ErrorKind::kInput: return CC_ERR_INPUT;
    case ErrorKind::kParse: return CC_ERR_PARSE;
    case ErrorKind::kFormat: return CC_ERR_FORMAT;
    case ErrorKind::kState: return CC_ERR_STATE;
    case ErrorKind::kNumeric: return CC_ERR_NUMERIC;
    case ErrorKind::kTraining: return CC_ERR_TRAINING;
    case ErrorKind::kGuard: return CC_ERR_GUARD;
    case ErrorKind::kIo: return CC_ERR_IO;
  }
  return CC_ERR_INTERNAL;
}

template <typename F>
cc_status Guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return CC_OK;
  } catch (const cellcircuit::Error& e) {
    g_last_error = e.what();
    return StatusOf(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CC_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CC_ERR_INTERNAL;
  }
}

cc_status Null(const char* what) {
  g_last_error = std::string(what) + " is null";
  return CC_ERR_INPUT;
}

char* Dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* cc_version(void) { return "0.1.0"; }

const char* cc_last_error(void) { return g_last_error.c_str(); }

const char* cc_status_name(cc_status status) {
  switch (status) {
    case CC_OK: return "ok";
    case CC_ERR_CONFIG: return "config";
    case CC_ERR_INPUT: return "input";
    case CC_ERR_PARSE: return "parse";
    case CC_ERR_FORMAT: return "format";
    case CC_ERR_STATE: return "state";
    case CC_ERR_NUMERIC: return "numeric";
    case CC_ERR_TRAINING: return "training";
    case CC_ERR_GUARD: return "guard";
    case CC_ERR_IO: return "io";
    case CC_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void cc_string_free(char* s) { std::free(s); }

cc_status cc_config_new(cc_config** out) {
  if (!out) return Null("out");
  return Guard([&] { *out = new cc_config{}; });
}

cc_status cc_config_load(const char* path, cc_config** out) {
  if (!path) return Null("path");
  if (!out) return Null("out");
  return Guard([&] { *out = new cc_config{cellcircuit::LoadRunConfig(path)}; });
}

cc_status cc_config_set(cc_config* config, const char* section, const char* key,
                        const char* value) {
  if (!config) return Null("config");
  if (!key || !value) return Null("key or value");
  return Guard([&] {
    const std::string where = std::string("setting ") + (section && *section ? section : "") +
                              (section && *section ? "." : "") + key;
    cellcircuit::RunConfig next = config->config;
    cellcircuit::SetConfigValue(next, section ? section : "", key, value, where);
    next.Validate();
    config->config = std::move(next);
  });
}

cc_status cc_config_format(const cc_config* config, char** out) {
  if (!config) return Null("config");
  if (!out) return Null("out");
  return Guard([&] { *out = Dup(cellcircuit::FormatRunConfig(config->config)); });
}

cc_status cc_config_get(const cc_config* config, const char* section, const char* key,
                        char** out) {
  if (!config) return Null("config");
  if (!key) return Null("key");
  if (!out) return Null("out");
  return Guard([&] {
    *out = Dup(cellcircuit::GetConfigValue(config->config, section ? section : "", key));
  });
}

void cc_config_free(cc_config* config) { delete config; }

cc_status cc_gen_corpus(const cc_config* config) {
  if (!config) return Null("config");
  return Guard([&] { cellcircuit::RunGenCorpus(config->config); });
}

cc_status cc_train_bpe(const cc_config* config) {
  if (!config) return Null("config");
  return Guard([&] { cellcircuit::RunTrainBpe(config->config); });
}

cc_status cc_train_lm(const cc_config* config, cc_progress_fn progress, void* user) {
  if (!config) return Null("config");
  return Guard([&] {
    std::function<void(long, double)> cb;
    if (progress) cb = [&](long step, double loss) { progress(step, loss, user); };
    cellcircuit::RunTrainLm(config->config, cb);
  });
}

cc_status cc_train_tc(const cc_config* config) {
  if (!config) return Null("config");
  return Guard([&] { cellcircuit::RunTrainTc(config->config); });
}

cc_status cc_eval(const cc_config* config, char** modes_table) {
  if (!config) return Null("config");
  return Guard([&] {
    const auto m = cellcircuit::RunEval(config->config);
    if (modes_table) *modes_table = Dup(cellcircuit::FormatModeTable(m));
  });
}

cc_status cc_features(const cc_config* config, const int* ids, size_t n_ids) {
  if (!config) return Null("config");
  if (n_ids > 0 && !ids) return Null("ids");
  return Guard([&] {
    cellcircuit::RunFeatures(config->config, std::vector<int>(ids, ids + n_ids));
  });
}

cc_status cc_trace(const cc_config* config, const char* prompt, const char* target,
                   const char* name, char** txt_path) {
  if (!config) return Null("config");
  if (!prompt || !target) return Null("prompt or target");
  return Guard([&] {
    const auto path = cellcircuit::RunTrace(config->config, prompt, target,
                                            name && *name ? name : "trace");
    if (txt_path) *txt_path = Dup(path);
  });
}

cc_status cc_tracer_open(const cc_config* config, cc_tracer** out) {
  if (!config) return Null("config");
  if (!out) return Null("out");
  return Guard([&] {
    config->config.Validate();
    *out = new cc_tracer{config->config, cellcircuit::LoadArtifacts(config->config)};
  });
}

cc_status cc_tracer_trace(const cc_tracer* tracer, const char* prompt, const char* target,
                          char** predicted, char** circuit_text, char** dot) {
  if (!tracer) return Null("tracer");
  if (!prompt || !target) return Null("prompt or target");
  return Guard([&] {
    const auto p = cellcircuit::PreparePrompt(tracer->artifacts, prompt);
    const auto r = cellcircuit::TraceCircuit(tracer->artifacts, p, target, tracer->config.trace);
    if (predicted) *predicted = Dup(p.predicted);
    if (circuit_text) *circuit_text = Dup(r.text);
    if (dot) *dot = Dup(r.dot);
  });
}

void cc_tracer_free(cc_tracer* tracer) { delete tracer; }

cc_status cc_server_start(const cc_config* config, const char* host, int port, cc_server** out,
                          int* bound_port) {
  if (!config) return Null("config");
  if (!out) return Null("out");
  return Guard([&] {
    const auto& c = config->config;
    c.Validate();
    if (port < 0 || port > 65535) cellcircuit::Fail(cellcircuit::ErrorKind::kInput, "port out of range");
    auto artifacts = std::make_shared<const cellcircuit::Artifacts>(cellcircuit::LoadArtifacts(c));
    cellcircuit::ServiceOptions opt;
    opt.max_sessions = c.max_sessions;
    opt.params = c.trace;
    opt.contexts = c.feature_contexts;
    auto s = std::make_unique<cc_server>();
    s->server = std::make_unique<cellcircuit::TraceServer>(std::move(artifacts), opt);
    const int p = s->server->Bind(host && *host ? host : "127.0.0.1", port);
    s->thread = std::thread([srv = s->server.get()] { srv->Run(); });
    if (bound_port) *bound_port = p;
    *out = s.release();
  });
}

cc_status cc_server_wait(cc_server* server) {
  if (!server) return Null("server");
  return Guard([&] {
    if (server->thread.joinable()) server->thread.join();
  });
}

cc_status cc_server_stop(cc_server* server) {
  if (!server) return Null("server");
  return Guard([&] { server->server->Stop(); });
}

void cc_server_free(cc_server* server) {
  if (!server) return;
  server->server->Stop();
  if (server->thread.joinable()) server->thread.join();
  delete server;
}

}  // extern "C"
