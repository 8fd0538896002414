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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cellcircuit/circuit.hpp"
#include "cellcircuit/corpus.hpp"
#include "cellcircuit/model.hpp"
#include "cellcircuit/transcoder.hpp"

namespace cellcircuit {

// Everything one pipeline run needs. Stage seeds are derived from `seed`
// through named substreams, so each stage is reproducible on its own.
struct RunConfig {
  uint64_t seed = 1;
  std::string workdir = "work";

  SyntheticSpec corpus;
  double train_fraction = 0.9;

  int vocab_size = 512;

  ModelConfig model;
  LmTrainConfig lm;

  TranscoderTrainConfig tc;
  std::vector<int> tc_layers;  // empty: every layer

  ExtractionParams trace;

  int feature_contexts = 10;
  int port = 7731;
  int max_sessions = 64;

  RunConfig();
  void Validate() const;
  std::vector<int> Layers() const;
};

// key = value lines under [section] headers; '#' starts a comment. Keys
// before any header belong to the top level (seed, workdir). Unknown
// sections or keys are kConfig errors naming the line.
RunConfig ParseRunConfig(std::string_view text);
RunConfig LoadRunConfig(const std::string& path);

// Canonical rendering; ParseRunConfig(FormatRunConfig(c)) reproduces c.
std::string FormatRunConfig(const RunConfig& c);

// Sets one value, e.g. ("train_tc", "l1_coefficient", "1e-3"). `where`
// prefixes error messages.
void SetConfigValue(RunConfig& c, std::string_view section, std::string_view key,
                    std::string_view value, const std::string& where);

// The value as FormatRunConfig renders it.
std::string GetConfigValue(const RunConfig& c, std::string_view section, std::string_view key);

uint64_t StageSeed(const RunConfig& c, std::string_view stage);

}  // namespace cellcircuit
