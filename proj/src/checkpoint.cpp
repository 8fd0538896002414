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

#include "cellcircuit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"

namespace cellcircuit {
namespace {

constexpr std::string_view kManifestMagic = "cellcircuit-checkpoint v1";

std::string Hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string ShapeString(const std::vector<int64_t>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::string EncodeFloats(const float* data, size_t n) {
  std::string out(n * sizeof(float), '\0');
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits = std::bit_cast<uint32_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + i * 4, &bits, 4);
  }
  return out;
}

void DecodeFloats(std::string_view bytes, float* out) {
  for (size_t i = 0; i < bytes.size() / 4; ++i) {
    uint32_t bits;
    std::memcpy(&bits, bytes.data() + i * 4, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out[i] = std::bit_cast<float>(bits);
  }
}

std::map<std::string, std::string> ConfigMap(const Checkpoint& c) {
  return {c.config.begin(), c.config.end()};
}

long long ConfigInt(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) Fail(ErrorKind::kFormat, "checkpoint config is missing '" + key + "'");
  return ParseInt(it->second, "checkpoint config key " + key);
}

void ExpectSpecs(const std::vector<TensorSpec>& expected, const std::vector<TensorSpec>& got) {
  if (expected.size() != got.size())
    Fail(ErrorKind::kFormat, "manifest lists " + std::to_string(got.size()) +
                                 " tensors, expected " + std::to_string(expected.size()));
  for (size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != got[i].name || expected[i].shape != got[i].shape)
      Fail(ErrorKind::kFormat, "manifest tensor " + got[i].name + " (" +
                                   ShapeString(got[i].shape) + ") does not match expected " +
                                   expected[i].name + " (" + ShapeString(expected[i].shape) + ")");
  }
}

}  // namespace

uint64_t Fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void WriteCheckpoint(const std::string& dir, const Checkpoint& ckpt) {
  MakeDirs(dir);
  std::string config;
  for (const auto& [k, v] : ckpt.config) config += k + "=" + v + "\n";

  std::string weights;
  std::string manifest(kManifestMagic);
  manifest += '\n';
  for (const auto& s : ckpt.specs) {
    if (s.offset + s.numel() > ckpt.data.size())
      Fail(ErrorKind::kInput, "tensor " + s.name + " exceeds the parameter buffer");
    const std::string bytes = EncodeFloats(ckpt.data.data() + s.offset, s.numel());
    manifest += "tensor\t" + s.name + '\t' + ShapeString(s.shape) + '\t' +
                std::to_string(weights.size()) + '\t' + std::to_string(bytes.size()) + '\t' +
                Hex64(Fnv1a64(bytes)) + '\n';
    weights += bytes;
  }
  manifest += "checksum\t" + Hex64(Fnv1a64(weights)) + '\n';
  WriteFile(dir + "/config", config);
  WriteFile(dir + "/weights.bin", weights);
  WriteFile(dir + "/manifest", manifest);
}

Checkpoint ReadCheckpoint(const std::string& dir) {
  for (const char* f : {"config", "manifest", "weights.bin"}) {
    if (!FileExists(dir + "/" + f))
      Fail(ErrorKind::kState, "checkpoint " + dir + " is missing '" + f + "'");
  }
  Checkpoint ckpt;
  const auto config_lines = SplitLines(ReadFile(dir + "/config"));
  for (size_t i = 0; i < config_lines.size(); ++i) {
    if (config_lines[i].empty()) continue;
    const size_t eq = config_lines[i].find('=');
    if (eq == std::string::npos)
      Fail(ErrorKind::kFormat, "checkpoint config line " + std::to_string(i + 1) + ": expected key=value");
    ckpt.config.emplace_back(config_lines[i].substr(0, eq), config_lines[i].substr(eq + 1));
  }

  const auto lines = SplitLines(ReadFile(dir + "/manifest"));
  if (lines.empty() || lines[0] != kManifestMagic)
    Fail(ErrorKind::kFormat, "manifest: missing header '" + std::string(kManifestMagic) + "'");
  const std::string weights = ReadFile(dir + "/weights.bin");

  struct Entry {
    TensorSpec spec;
    size_t byte_offset, n_bytes;
    std::string checksum;
  };
  std::vector<Entry> entries;
  std::string total_checksum;
  size_t total = 0;
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto where = "manifest line " + std::to_string(i + 1);
    if (lines[i].empty()) continue;
    const auto f = Split(lines[i], '\t');
    if (f[0] == "checksum" && f.size() == 2) {
      total_checksum = f[1];
      continue;
    }
    if (f[0] != "tensor" || f.size() != 6) Fail(ErrorKind::kFormat, where + ": malformed entry");
    Entry e;
    e.spec.name = f[1];
    for (const auto& dim : Split(f[2], 'x')) e.spec.shape.push_back(ParseInt(dim, where));
    e.spec.offset = total;
    e.byte_offset = static_cast<size_t>(ParseInt(f[3], where));
    e.n_bytes = static_cast<size_t>(ParseInt(f[4], where));
    e.checksum = f[5];
    if (e.n_bytes != e.spec.numel() * sizeof(float))
      Fail(ErrorKind::kFormat, "tensor " + e.spec.name + ": byte count does not match shape");
    total += e.spec.numel();
    entries.push_back(std::move(e));
  }
  if (total_checksum.empty()) Fail(ErrorKind::kFormat, "manifest: missing checksum line");

  ckpt.data.resize(total);
  for (const auto& e : entries) {
    if (e.byte_offset + e.n_bytes > weights.size())
      Fail(ErrorKind::kFormat, "tensor " + e.spec.name + " is truncated in weights.bin");
    const std::string_view bytes(weights.data() + e.byte_offset, e.n_bytes);
    if (Hex64(Fnv1a64(bytes)) != e.checksum)
      Fail(ErrorKind::kFormat, "tensor " + e.spec.name + " fails its checksum");
    DecodeFloats(bytes, ckpt.data.data() + e.spec.offset);
    ckpt.specs.push_back(e.spec);
  }
  if (Hex64(Fnv1a64(weights)) != total_checksum)
    Fail(ErrorKind::kFormat, "weights.bin fails the manifest checksum");
  return ckpt;
}

void SaveModel(const Model<float>& model, const std::string& dir) {
  const auto& c = model.config();
  Checkpoint ckpt;
  ckpt.config = {{"kind", "model"},
                 {"vocab_size", std::to_string(c.vocab_size)},
                 {"d_model", std::to_string(c.d_model)},
                 {"n_layers", std::to_string(c.n_layers)},
                 {"n_heads", std::to_string(c.n_heads)},
                 {"d_mlp", std::to_string(c.d_mlp)},
                 {"max_context", std::to_string(c.max_context)},
                 {"seed", std::to_string(c.seed)}};
  ckpt.specs = model.layout().specs;
  ckpt.data.assign(model.params().begin(), model.params().end());
  WriteCheckpoint(dir, ckpt);
}

Model<float> LoadModel(const std::string& dir) {
  auto ckpt = ReadCheckpoint(dir);
  const auto m = ConfigMap(ckpt);
  if (m.count("kind") == 0 || m.at("kind") != "model")
    Fail(ErrorKind::kFormat, dir + " is not a model checkpoint");
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(ConfigInt(m, "vocab_size"));
  cfg.d_model = static_cast<int>(ConfigInt(m, "d_model"));
  cfg.n_layers = static_cast<int>(ConfigInt(m, "n_layers"));
  cfg.n_heads = static_cast<int>(ConfigInt(m, "n_heads"));
  cfg.d_mlp = static_cast<int>(ConfigInt(m, "d_mlp"));
  cfg.max_context = static_cast<int>(ConfigInt(m, "max_context"));
  if (m.count("seed") == 0) Fail(ErrorKind::kFormat, "checkpoint config is missing 'seed'");
  cfg.seed = ParseUint64(m.at("seed"), "checkpoint config key seed");
  try {
    cfg.Validate();
  } catch (const Error& e) {
    Fail(ErrorKind::kFormat, std::string("checkpoint config: ") + e.what());
  }
  Model<float> model(cfg);
  ExpectSpecs(model.layout().specs, ckpt.specs);
  std::copy(ckpt.data.begin(), ckpt.data.end(), model.params().begin());
  return model;
}

void SaveTranscoder(const Transcoder<float>& tc, const std::string& dir) {
  Checkpoint ckpt;
  ckpt.config = {{"kind", "transcoder"},
                 {"layer", std::to_string(tc.layer())},
                 {"d_model", std::to_string(tc.d_model())},
                 {"hidden", std::to_string(tc.hidden())}};
  ckpt.specs = tc.specs();
  ckpt.data.assign(tc.params().begin(), tc.params().end());
  WriteCheckpoint(dir, ckpt);
}

Transcoder<float> LoadTranscoder(const std::string& dir) {
  auto ckpt = ReadCheckpoint(dir);
  const auto m = ConfigMap(ckpt);
  if (m.count("kind") == 0 || m.at("kind") != "transcoder")
    Fail(ErrorKind::kFormat, dir + " is not a transcoder checkpoint");
  const auto layer = static_cast<int>(ConfigInt(m, "layer"));
  const auto d = static_cast<int>(ConfigInt(m, "d_model"));
  const auto hidden = static_cast<int>(ConfigInt(m, "hidden"));
  if (d < 1 || hidden <= d) Fail(ErrorKind::kFormat, "transcoder checkpoint has invalid shape");
  Transcoder<float> tc(layer, d, hidden);
  ExpectSpecs(tc.specs(), ckpt.specs);
  std::copy(ckpt.data.begin(), ckpt.data.end(), tc.params().begin());
  return tc;
}

}  // namespace cellcircuit
