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
#include <utility>
#include <vector>

#include "cellcircuit/model.hpp"
#include "cellcircuit/tensor.hpp"
#include "cellcircuit/transcoder.hpp"

namespace cellcircuit {

// On-disk layout of a checkpoint directory:
//   config      key=value lines
//   manifest    "cellcircuit-checkpoint v1", then per tensor
//               tensor<TAB>name<TAB>shape<TAB>byte_offset<TAB>n_bytes<TAB>fnv1a64
//               and a final checksum<TAB>fnv1a64 over weights.bin
//   weights.bin little-endian float32, row-major, manifest order
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<TensorSpec> specs;
  std::vector<float> data;
};

uint64_t Fnv1a64(std::string_view bytes);

void WriteCheckpoint(const std::string& dir, const Checkpoint& ckpt);
// Throws kFormat naming the offending tensor on truncation, checksum or
// manifest mismatch.
Checkpoint ReadCheckpoint(const std::string& dir);

void SaveModel(const Model<float>& model, const std::string& dir);
Model<float> LoadModel(const std::string& dir);

void SaveTranscoder(const Transcoder<float>& tc, const std::string& dir);
Transcoder<float> LoadTranscoder(const std::string& dir);

}  // namespace cellcircuit
