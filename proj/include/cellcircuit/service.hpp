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

#include <memory>
#include <string>

#include "cellcircuit/circuit.hpp"
#include "cellcircuit/pipeline.hpp"

namespace cellcircuit {

struct ServiceOptions {
  int max_sessions = 64;  // least recently used sessions are evicted
  ExtractionParams params;  // K and threshold defaults for /expand
  int contexts = 10;        // default m for /contexts
};

// JSON over HTTP for the circuit explorer. Every payload carries "v": 1.
//
//   POST /api/sessions                          {"prompt": "..."}
//   GET  /api/sessions/{id}/features?position=t&top=n
//   POST /api/sessions/{id}/expand              {"node": id, "K": k, "theta": x}
//   GET  /api/features/{layer}/{id}/contexts?m=M
//   GET  /healthz
//
// Sessions are immutable once created. Expansion is stateless: the client
// keeps the graph.
class TraceServer {
 public:
  TraceServer(std::shared_ptr<const Artifacts> artifacts, ServiceOptions options);
  ~TraceServer();
  TraceServer(const TraceServer&) = delete;
  TraceServer& operator=(const TraceServer&) = delete;

  // Port 0 picks a free port. Returns the bound port; kIo on failure.
  int Bind(const std::string& host, int port);
  // Blocks until Stop().
  void Run();
  void Stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cellcircuit
