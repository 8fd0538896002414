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
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cellcircuit {

// Byte-level BPE vocabulary. Ids 0..255 are raw bytes, followed by the
// special tokens, followed by one id per merge in merge order.
class Vocab {
 public:
  static constexpr int kNumBytes = 256;
  static constexpr int kBos = 256;
  static constexpr int kPad = 257;
  static constexpr int kNumSpecial = 2;
  static constexpr int kFirstMerge = kNumBytes + kNumSpecial;

  Vocab();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::string& token_bytes(int id) const;
  bool is_special(int id) const { return id == kBos || id == kPad; }

  // Appends a merge of two existing ids; returns the new id.
  int AddMerge(int left, int right);

  std::vector<int> Encode(std::string_view text) const;
  std::string Decode(std::span<const int> ids) const;

  std::string Serialize() const;
  static Vocab Deserialize(std::string_view text);

  bool operator==(const Vocab& other) const { return merges_ == other.merges_; }

 private:
  void EncodeChunk(std::string_view chunk, std::vector<int>& out) const;

  std::vector<std::string> tokens_;
  std::vector<std::pair<int, int>> merges_;
  std::unordered_map<uint64_t, int> merge_rank_;
};

// Splits text into pre-tokenization chunks: a chunk starts at every space
// (the space stays attached to the following word) and every newline forms
// its own chunk. Merges never cross chunk boundaries.
std::vector<std::string_view> SplitChunks(std::string_view text);

// Greedy most-frequent-pair merging; ties go to the lexicographically
// smaller (left bytes, right bytes) pair. Stops at target_vocab_size or when
// no pair occurs at least twice.
Vocab TrainBpe(std::span<const std::string> corpus, int target_vocab_size);

struct TokenSpan {
  size_t begin = 0;
  size_t end = 0;
};

// Byte spans of each token in the decoded text. Special tokens map to
// empty spans.
std::vector<TokenSpan> TokenSpans(const Vocab& vocab, std::span<const int> ids);

}  // namespace cellcircuit
