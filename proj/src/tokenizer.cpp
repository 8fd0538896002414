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

#include "cellcircuit/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <unordered_set>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"

namespace cellcircuit {
namespace {

uint64_t PairKey(int a, int b) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
         static_cast<uint32_t>(b);
}

constexpr std::string_view kVocabMagic = "cellcircuit-bpe v1";

}  // namespace

Vocab::Vocab() {
  tokens_.reserve(kFirstMerge);
  for (int b = 0; b < kNumBytes; ++b) tokens_.emplace_back(1, static_cast<char>(b));
  tokens_.emplace_back();  // BOS
  tokens_.emplace_back();  // PAD
}

const std::string& Vocab::token_bytes(int id) const {
  if (id < 0 || id >= size())
    Fail(ErrorKind::kInput, "unknown token id " + std::to_string(id));
  return tokens_[id];
}

int Vocab::AddMerge(int left, int right) {
  if (left < 0 || right < 0 || left >= size() || right >= size() ||
      is_special(left) || is_special(right))
    Fail(ErrorKind::kInput, "merge refers to an invalid token");
  const int id = size();
  tokens_.push_back(tokens_[left] + tokens_[right]);
  merges_.emplace_back(left, right);
  merge_rank_[PairKey(left, right)] = static_cast<int>(merges_.size()) - 1;
  return id;
}

std::vector<std::string_view> SplitChunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  size_t start = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == ' ' || c == '\n') && i > start) {
      chunks.push_back(text.substr(start, i - start));
      start = i;
    }
    if (c == '\n') {
      chunks.push_back(text.substr(i, 1));
      start = i + 1;
    }
  }
  if (start < text.size()) chunks.push_back(text.substr(start));
  return chunks;
}

void Vocab::EncodeChunk(std::string_view chunk, std::vector<int>& out) const {
  std::vector<int> ids;
  ids.reserve(chunk.size());
  for (unsigned char c : chunk) ids.push_back(c);
  while (ids.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    for (size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_rank_.find(PairKey(ids[i], ids[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto [l, r] = merges_[best_rank];
    const int merged = kFirstMerge + best_rank;
    std::vector<int> next;
    next.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
        next.push_back(merged);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids.swap(next);
  }
  out.insert(out.end(), ids.begin(), ids.end());
}

std::vector<int> Vocab::Encode(std::string_view text) const {
  std::vector<int> out;
  for (auto chunk : SplitChunks(text)) EncodeChunk(chunk, out);
  return out;
}

std::string Vocab::Decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token_bytes(id);
  return out;
}

std::string Vocab::Serialize() const {
  std::string out(kVocabMagic);
  out += "\nvocab_size " + std::to_string(size());
  out += "\nbos " + std::to_string(kBos);
  out += "\npad " + std::to_string(kPad);
  out += "\nmerges " + std::to_string(merges_.size()) + "\n";
  for (const auto& [l, r] : merges_) {
    out += EscapeBytes(tokens_[l]);
    out += '\t';
    out += EscapeBytes(tokens_[r]);
    out += '\n';
  }
  return out;
}

Vocab Vocab::Deserialize(std::string_view text) {
  const auto lines = SplitLines(text);
  auto where = [](size_t i) { return "vocab line " + std::to_string(i + 1); };
  if (lines.size() < 5 || lines[0] != kVocabMagic)
    Fail(ErrorKind::kParse, "vocab line 1: missing header '" + std::string(kVocabMagic) + "'");
  auto field = [&](size_t i, std::string_view key) {
    const auto parts = Split(lines[i], ' ');
    if (parts.size() != 2 || parts[0] != key)
      Fail(ErrorKind::kParse, where(i) + ": expected '" + std::string(key) + " <n>'");
    return ParseInt(parts[1], where(i));
  };
  const long long vocab_size = field(1, "vocab_size");
  if (field(2, "bos") != kBos || field(3, "pad") != kPad)
    Fail(ErrorKind::kParse, "vocab: unsupported special token ids");
  const long long n_merges = field(4, "merges");
  if (vocab_size != kFirstMerge + n_merges)
    Fail(ErrorKind::kParse, "vocab: vocab_size does not match merge count");

  Vocab v;
  std::unordered_map<std::string, int> by_bytes;
  for (int id = 0; id < kNumBytes; ++id) by_bytes.emplace(v.tokens_[id], id);
  size_t li = 5;
  for (long long m = 0; m < n_merges; ++m, ++li) {
    if (li >= lines.size()) Fail(ErrorKind::kParse, where(li) + ": missing merge line");
    const auto parts = Split(lines[li], '\t');
    if (parts.size() != 2) Fail(ErrorKind::kParse, where(li) + ": expected left<TAB>right");
    const auto l = by_bytes.find(UnescapeBytes(parts[0], where(li)));
    const auto r = by_bytes.find(UnescapeBytes(parts[1], where(li)));
    if (l == by_bytes.end() || r == by_bytes.end())
      Fail(ErrorKind::kParse, where(li) + ": merge refers to an unknown token");
    const int id = v.AddMerge(l->second, r->second);
    by_bytes.emplace(v.tokens_[id], id);
  }
  for (; li < lines.size(); ++li) {
    if (!lines[li].empty()) Fail(ErrorKind::kParse, where(li) + ": trailing content");
  }
  return v;
}

Vocab TrainBpe(std::span<const std::string> corpus, int target_vocab_size) {
  if (corpus.empty()) Fail(ErrorKind::kInput, "cannot train BPE on an empty corpus");
  if (target_vocab_size < Vocab::kFirstMerge)
    Fail(ErrorKind::kConfig, "target vocab size must be at least " +
                                 std::to_string(Vocab::kFirstMerge));

  // Unique chunks with counts; std::map keeps iteration order deterministic.
  std::map<std::string, long long> chunk_counts;
  for (const auto& line : corpus) {
    for (auto chunk : SplitChunks(line)) ++chunk_counts[std::string(chunk)];
  }
  std::vector<std::vector<int>> words;
  std::vector<long long> counts;
  for (const auto& [chunk, n] : chunk_counts) {
    std::vector<int> ids;
    for (unsigned char c : chunk) ids.push_back(c);
    words.push_back(std::move(ids));
    counts.push_back(n);
  }

  Vocab vocab;
  std::unordered_set<std::string> existing;
  for (int id = 0; id < Vocab::kNumBytes; ++id) existing.insert(vocab.token_bytes(id));

  while (vocab.size() < target_vocab_size) {
    std::unordered_map<uint64_t, long long> pair_counts;
    for (size_t w = 0; w < words.size(); ++w) {
      const auto& ids = words[w];
      for (size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[PairKey(ids[i], ids[i + 1])] += counts[w];
    }
    long long best_count = 1;
    int best_l = -1, best_r = -1;
    for (const auto& [key, n] : pair_counts) {
      const int l = static_cast<int>(key >> 32);
      const int r = static_cast<int>(key & 0xffffffffu);
      if (n < best_count) continue;
      const auto& lb = vocab.token_bytes(l);
      const auto& rb = vocab.token_bytes(r);
      // Keep token strings unique so the text vocab file stays unambiguous.
      if (existing.count(lb + rb)) continue;
      const bool better =
          n > best_count || best_l < 0 ||
          std::tie(lb, rb) < std::tie(vocab.token_bytes(best_l), vocab.token_bytes(best_r));
      if (better) {
        best_count = n;
        best_l = l;
        best_r = r;
      }
    }
    if (best_l < 0 || best_count < 2) break;
    const int merged = vocab.AddMerge(best_l, best_r);
    existing.insert(vocab.token_bytes(merged));
    for (auto& ids : words) {
      if (ids.size() < 2) continue;
      std::vector<int> next;
      next.reserve(ids.size());
      for (size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == best_l && ids[i + 1] == best_r) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids.swap(next);
    }
  }
  return vocab;
}

std::vector<TokenSpan> TokenSpans(const Vocab& vocab, std::span<const int> ids) {
  std::vector<TokenSpan> spans;
  spans.reserve(ids.size());
  size_t pos = 0;
  for (int id : ids) {
    const size_t len = vocab.token_bytes(id).size();
    spans.push_back({pos, pos + len});
    pos += len;
  }
  return spans;
}

}  // namespace cellcircuit
