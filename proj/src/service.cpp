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

#include "cellcircuit/service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <list>
#include <map>
#include <mutex>
#include <unordered_map>

#include "cellcircuit/attribution.hpp"
#include "cellcircuit/error.hpp"
#include "cellcircuit/eval.hpp"
#include "cellcircuit/io.hpp"

namespace cellcircuit {
namespace {

using nlohmann::json;

constexpr int kVersion = 1;

struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void Throw(int status, std::string message) {
  throw HttpError{status, std::move(message)};
}

std::string Dump(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

int QueryInt(const httplib::Request& req, const char* key, std::optional<int> fallback) {
  if (!req.has_param(key)) {
    if (!fallback) Throw(400, std::string("missing query parameter '") + key + "'");
    return *fallback;
  }
  try {
    return static_cast<int>(ParseInt(req.get_param_value(key), key));
  } catch (const Error& e) {
    Throw(400, e.what());
  }
}

json NodeJson(const FeatureNode& n, const PreparedPrompt* p) {
  json j = {{"id", n.Id()},
            {"kind", NodeKindName(n.kind)},
            {"layer", n.layer},
            {"index", n.index},
            {"position", n.position},
            {"label", NodeLabel(n)}};
  if (p && n.position >= 0 && n.position < static_cast<int>(p->tokens.size())) {
    j["token"] = p->tokens[n.position].text;
    j["gene"] = p->tokens[n.position].gene;
  }
  return j;
}

struct Session {
  std::string id;
  PreparedPrompt prompt;
};

}  // namespace

struct TraceServer::Impl {
  std::shared_ptr<const Artifacts> a;
  ServiceOptions opt;
  httplib::Server server;

  std::mutex run_mu;  // orders Run against Stop
  bool started = false;
  bool stop_requested = false;

  std::mutex mu;  // guards sessions, lru, next_id and contexts_cache
  std::list<std::string> lru;  // front is most recent
  std::unordered_map<std::string, std::pair<std::shared_ptr<const Session>,
                                            std::list<std::string>::iterator>>
      sessions;
  long next_id = 1;
  std::map<std::tuple<int, int, int>, std::string> contexts_cache;

  Impl(std::shared_ptr<const Artifacts> artifacts, ServiceOptions o)
      : a(std::move(artifacts)), opt(std::move(o)) {
    if (opt.max_sessions < 1) Fail(ErrorKind::kConfig, "max_sessions must be >= 1");
    opt.params.Validate();
    Routes();
  }

  std::shared_ptr<const Session> Find(const std::string& id) {
    std::lock_guard lock(mu);
    const auto it = sessions.find(id);
    if (it == sessions.end()) Throw(404, "unknown session '" + id + "'");
    lru.splice(lru.begin(), lru, it->second.second);
    return it->second.first;
  }

  std::string Store(PreparedPrompt p) {
    std::lock_guard lock(mu);
    auto s = std::make_shared<Session>();
    s->id = "s" + std::to_string(next_id++);
    s->prompt = std::move(p);
    lru.push_front(s->id);
    sessions.emplace(s->id, std::make_pair(s, lru.begin()));
    while (static_cast<int>(sessions.size()) > opt.max_sessions) {
      sessions.erase(lru.back());
      lru.pop_back();
    }
    return s->id;
  }

  json CreateSession(const httplib::Request& req) {
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("prompt") ||
        !body["prompt"].is_string())
      Throw(400, "expected {\"prompt\": string}");
    PreparedPrompt p = PreparePrompt(*a, body["prompt"].get<std::string>());
    json tokens = json::array();
    for (size_t t = 0; t < p.tokens.size(); ++t)
      tokens.push_back({{"position", t},
                        {"id", p.ids[t]},
                        {"text", p.tokens[t].text},
                        {"gene", p.tokens[t].gene}});
    json out = {{"v", kVersion},
                {"prompt", p.prompt},
                {"predicted", p.predicted},
                {"n_layers", a->model.config().n_layers},
                {"tokens", std::move(tokens)}};
    out["session"] = Store(std::move(p));
    return out;
  }

  json Features(const httplib::Request& req, const std::string& id) {
    const auto s = Find(id);
    const auto& p = s->prompt;
    const int n = static_cast<int>(p.ids.size());
    const int position = QueryInt(req, "position", n - 1);
    const int top = QueryInt(req, "top", 10);
    if (position < 0 || position >= n) Throw(400, "position out of range");
    if (top < 0) Throw(400, "top must be >= 0");
    const AttributionContext ctx(a->model, a->tcs, *p.session);
    const int layer = ctx.n_layers() - 1;
    std::vector<std::pair<double, int>> active;
    for (int i = 0; i < ctx.transcoder(layer).hidden(); ++i) {
      const double z = ctx.Activation(FeatureNode::Feature(layer, i, position));
      if (z > 0.0) active.emplace_back(z, i);
    }
    std::sort(active.begin(), active.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    if (active.size() > static_cast<size_t>(top)) active.resize(top);
    json list = json::array();
    for (const auto& [z, i] : active) {
      json j = NodeJson(FeatureNode::Feature(layer, i, position), &p);
      j["activation"] = z;
      list.push_back(std::move(j));
    }
    return {{"v", kVersion}, {"session", id}, {"position", position}, {"layer", layer},
            {"features", std::move(list)}};
  }

  json Expand(const httplib::Request& req, const std::string& id) {
    const auto s = Find(id);
    const auto& p = s->prompt;
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("node") ||
        !body["node"].is_string())
      Throw(400, "expected {\"node\": string, \"K\": int, \"theta\": number}");
    FeatureNode node;
    try {
      node = FeatureNode::Parse(body["node"].get<std::string>());
    } catch (const Error& e) {
      Throw(400, e.what());
    }
    ExtractionParams params = opt.params;
    if (body.contains("K")) {
      if (!body["K"].is_number_integer()) Throw(400, "K must be an integer");
      params.top_k = body["K"].get<int>();
    }
    if (body.contains("theta") && !body["theta"].is_null()) {
      if (!body["theta"].is_number()) Throw(400, "theta must be a number");
      params.threshold = body["theta"].get<double>();
    }
    try {
      params.Validate();
    } catch (const Error& e) {
      Throw(400, e.what());
    }
    const AttributionContext ctx(a->model, a->tcs, *p.session);
    ctx.CheckNode(node);
    if (node.kind == NodeKind::kFeature && ctx.Activation(node) <= 0.0)
      Throw(422, node.Id() + " is not active on this prompt");
    json edges = json::array();
    std::optional<double> theta;
    if (node.expandable()) {
      const auto resolved = ResolveParams(ctx, node, params);
      theta = resolved.threshold;
      for (const auto& e : KeptEdges(ctx, node, resolved)) {
        json src = NodeJson(e.src, &p);
        src["activation"] = ctx.Activation(e.src);
        edges.push_back({{"src", std::move(src)},
                         {"dst", e.dst.Id()},
                         {"value", e.value},
                         {"path", PathKindName(e.path)},
                         {"head_layer", e.head_layer},
                         {"head", e.head}});
      }
    }
    json n = NodeJson(node, &p);
    n["activation"] = ctx.Activation(node);
    n["pre_activation"] = ctx.PreActivation(node);
    json out = {{"v", kVersion}, {"session", id}, {"node", std::move(n)},
                {"K", params.top_k}, {"edges", std::move(edges)}};
    out["theta"] = theta ? json(*theta) : json(nullptr);
    return out;
  }

  std::string Contexts(const httplib::Request& req, int layer, int feature) {
    const int n_layers = a->model.config().n_layers;
    if (layer < 0 || layer >= n_layers || layer >= static_cast<int>(a->tcs_f.size()))
      Throw(404, "unknown layer " + std::to_string(layer));
    const auto& tc = a->tcs_f[layer];
    if (feature < 0 || feature >= tc.hidden())
      Throw(404, "unknown feature " + std::to_string(feature));
    const int m = QueryInt(req, "m", opt.contexts);
    if (m < 0) Throw(400, "m must be >= 0");
    const auto key = std::make_tuple(layer, feature, m);
    {
      std::lock_guard lock(mu);
      if (const auto it = contexts_cache.find(key); it != contexts_cache.end()) return it->second;
    }
    const std::vector<int> ids = {feature};
    const auto r = FeatureReports(a->model_f, tc, a->vocab, a->train_sentences, ids, m).front();
    json contexts = json::array();
    for (const auto& c : r.contexts)
      contexts.push_back({{"sentence", c.sentence},
                          {"position", c.position},
                          {"token", c.token},
                          {"window", c.window},
                          {"activation", c.activation},
                          {"gene", c.gene}});
    json out = {{"v", kVersion},         {"layer", layer},          {"feature", feature},
                {"n_tokens", r.n_tokens}, {"contexts", std::move(contexts)}};
    out["log10_ef"] = std::isfinite(r.log10_ef) ? json(r.log10_ef) : json(nullptr);
    std::string body = Dump(out);
    std::lock_guard lock(mu);
    contexts_cache.emplace(key, body);
    return body;
  }

  template <typename F>
  httplib::Server::Handler Wrap(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      int status = 200;
      std::string body;
      try {
        body = f(req);
      } catch (const HttpError& e) {
        status = e.status;
        body = Dump({{"v", kVersion}, {"error", e.message}});
      } catch (const Error& e) {
        status = e.kind() == ErrorKind::kInput || e.kind() == ErrorKind::kParse ? 400 : 500;
        body = Dump({{"v", kVersion}, {"error", e.what()}});
      } catch (const std::exception& e) {
        status = 500;
        body = Dump({{"v", kVersion}, {"error", e.what()}});
      }
      res.status = status;
      res.set_content(body, "application/json");
    };
  }

  static int PathInt(const httplib::Request& req, int group) {
    try {
      return static_cast<int>(ParseInt(req.matches[group].str(), "path"));
    } catch (const Error&) {
      Throw(404, "not found");
    }
  }

  void Routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/healthz", Wrap([](const httplib::Request&) {
      return Dump({{"v", kVersion}, {"status", "ok"}});
    }));
    server.Post("/api/sessions",
                Wrap([this](const httplib::Request& r) { return Dump(CreateSession(r)); }));
    server.Get(R"(/api/sessions/([^/]+)/features)", Wrap([this](const httplib::Request& r) {
      return Dump(Features(r, r.matches[1].str()));
    }));
    server.Post(R"(/api/sessions/([^/]+)/expand)", Wrap([this](const httplib::Request& r) {
      return Dump(Expand(r, r.matches[1].str()));
    }));
    server.Get(R"(/api/features/([^/]+)/([^/]+)/contexts)", Wrap([this](const httplib::Request& r) {
      return Contexts(r, PathInt(r, 1), PathInt(r, 2));
    }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) res.set_content(Dump({{"v", kVersion}, {"error", "not found"}}), "application/json");
    });
  }
};

TraceServer::TraceServer(std::shared_ptr<const Artifacts> artifacts, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(artifacts), std::move(options))) {}

TraceServer::~TraceServer() { Stop(); }

int TraceServer::Bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) Fail(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void TraceServer::Run() {
  {
    std::lock_guard lock(impl_->run_mu);
    if (impl_->stop_requested) return;
    impl_->started = true;
  }
  impl_->server.listen_after_bind();
}

void TraceServer::Stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->run_mu);
    impl_->stop_requested = true;
    if (!impl_->started) return;
  }
  impl_->server.wait_until_ready();
  impl_->server.stop();
}

}  // namespace cellcircuit
