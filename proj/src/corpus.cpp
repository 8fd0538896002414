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

#include "cellcircuit/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <unordered_set>

#include "cellcircuit/error.hpp"
#include "cellcircuit/io.hpp"
#include "cellcircuit/rng.hpp"

namespace cellcircuit {
namespace {

// Symbols expressed in adult heart endothelium, used as names for synthetic
// genes so the tokenizer sees realistic subword structure.
constexpr const char* kGenePool[] = {
    "KIAA1217", "VWF",      "MT-CO1",   "FOXN3",    "MT-CO2",    "ENG",
    "MGLL",     "MT-ND4",   "MAGI1",    "MT-CO3",   "MT-CYB",    "IQGAP1",
    "SYNE1",    "CD36",     "RASAL2",   "SPARCL1",  "ST6GALNAC3", "LINC00486",
    "RAPGEF1",  "ID1",      "RBMS3",    "NFIB",     "PTPRB",     "LRMDA",
    "ARID2",    "MT-ATP6",  "SMAD2",    "ZBTB20",   "RGCC",      "PLAA",
    "SLC48A1",  "TACC1",    "MECOM",    "RB1",      "TSPAN14",   "FRMD4A",
    "AFDN",     "ANO2",     "SHOC2",    "CDC42BPA", "RASGRF2",   "CCDC85A",
    "ESR2",     "SLC1A1",   "FRYL",     "MALAT1",   "FAM241A",   "DIAPH2",
    "TSPAN15",  "LPAR6",    "HIF3A",    "ITGA6",    "PARP14",    "NSD3",
    "WNT2B",    "FTX",      "ART4",     "FBXW11",   "MTHFR",     "AFF1",
    "KHDRBS1",  "ZBTB46",   "ANKRD13C", "RDX",      "SRSF11",    "ROCK2",
    "SRSF10",   "BPTF",     "GRB10",    "ATG4C",    "AHCYL2",    "CFDP1",
    "LNX1",     "LRP5",     "MAP2K5",   "SIPA1L3",  "UVRAG",     "FLI1",
    "GNAI3",    "EGFL7",    "ARL17B",   "IL17RA",   "ASAP1",     "ZFP36L1",
    "PHLPP1",   "ASXL2",    "MT-ND1",   "KIAA1671", "LIFR",      "FSD1L",
    "PRMT9",    "DIPK2B",   "KIAA1328", "TIMP3",    "CEP68",     "KIAA0100",
    "KALRN",    "PTPRM",    "PPP3CC",   "NR3C1",    "FBXL7",     "WDR60",
    "ABLIM3",   "WWP1",     "ZNF761",   "LINC01060", "ZNF274",   "TTC28",
    "EPAS1",    "C6ORF89",  "B2M",      "FOXN2",    "NRP1",      "SMIM17",
    "VAV3",     "NCOA3",    "CCN2",     "GNAQ",     "WNK1",      "GMDS",
    "ZBTB16",   "MPPED2",   "PSD3",     "FAM214A",
};

constexpr const char* kCellTypePool[] = {
    "endothelial", "fibroblast", "cardiomyocyte", "pericyte",  "macrophage",
    "adipocyte",   "lymphocyte", "neuronal",      "mesothelial", "myeloid",
};

std::string ParseWhere(size_t line) { return "line " + std::to_string(line); }

}  // namespace

void ExpressionMatrix::Validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& g : gene_names) {
    if (!seen.insert(g).second) Fail(ErrorKind::kInput, "duplicate gene name " + g);
  }
  if (cell_labels.size() != cells.size())
    Fail(ErrorKind::kInput, "label count does not match cell count");
  for (size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].size() != gene_names.size())
      Fail(ErrorKind::kInput, "cell " + std::to_string(i) + " has wrong length");
    for (double v : cells[i]) {
      if (!(v >= 0.0))
        Fail(ErrorKind::kInput, "cell " + std::to_string(i) + " has a negative count");
    }
  }
}

void SyntheticSpec::Validate() const {
  if (n_genes < 1 || n_cell_types < 1 || markers_per_type < 0 ||
      cells_per_type < 1 || sentence_length < 0)
    Fail(ErrorKind::kConfig, "synthetic spec counts must be positive");
  if (static_cast<long long>(markers_per_type) * n_cell_types > n_genes)
    Fail(ErrorKind::kConfig, "markers_per_type * n_cell_types exceeds n_genes");
  if (sentence_length > n_genes)
    Fail(ErrorKind::kConfig, "sentence_length exceeds n_genes");
  if (!(marker_boost > 0.0)) Fail(ErrorKind::kConfig, "marker_boost must be positive");
  if (!(base_rate_min > 0.0) || !(base_rate_max >= base_rate_min))
    Fail(ErrorKind::kConfig, "invalid base rate range");
}

std::vector<std::string> SyntheticGeneNames(int n) {
  std::vector<std::string> names;
  const int pool = static_cast<int>(std::size(kGenePool));
  for (int i = 0; i < n; ++i) {
    names.push_back(i < pool ? std::string(kGenePool[i])
                             : "GENE" + std::to_string(i - pool + 1));
  }
  return names;
}

std::vector<std::string> SyntheticCellTypeNames(int n) {
  std::vector<std::string> names;
  const int pool = static_cast<int>(std::size(kCellTypePool));
  for (int i = 0; i < n; ++i) {
    names.push_back(i < pool ? std::string(kCellTypePool[i])
                             : "celltype" + std::to_string(i + 1));
  }
  return names;
}

SyntheticCorpus GenerateSynthetic(const SyntheticSpec& spec) {
  spec.Validate();
  Rng rng(spec.seed);
  SyntheticCorpus out;
  out.matrix.gene_names = SyntheticGeneNames(spec.n_genes);
  const auto types = SyntheticCellTypeNames(spec.n_cell_types);

  out.base_rates.resize(spec.n_genes);
  for (auto& r : out.base_rates) r = rng.Uniform(spec.base_rate_min, spec.base_rate_max);

  // Disjoint marker sets: a prefix of one random permutation, chunked.
  std::vector<int> perm(spec.n_genes);
  std::iota(perm.begin(), perm.end(), 0);
  rng.Shuffle(perm.begin(), perm.end());
  std::vector<int> marker_type(spec.n_genes, -1);
  for (int t = 0; t < spec.n_cell_types; ++t) {
    MarkerSet ms;
    ms.cell_type = types[t];
    for (int m = 0; m < spec.markers_per_type; ++m) {
      const int g = perm[t * spec.markers_per_type + m];
      marker_type[g] = t;
      ms.genes.push_back(out.matrix.gene_names[g]);
    }
    out.markers.push_back(std::move(ms));
  }

  for (int t = 0; t < spec.n_cell_types; ++t) {
    for (int c = 0; c < spec.cells_per_type; ++c) {
      std::vector<double> row(spec.n_genes);
      for (int g = 0; g < spec.n_genes; ++g) {
        double rate = out.base_rates[g];
        if (marker_type[g] == t) rate *= spec.marker_boost;
        row[g] = static_cast<double>(rng.Poisson(rate));
      }
      out.matrix.cells.push_back(std::move(row));
      out.matrix.cell_labels.push_back(types[t]);
    }
  }
  return out;
}

CellSentence RankGenes(const ExpressionMatrix& matrix, size_t cell_index,
                       size_t k) {
  if (cell_index >= matrix.n_cells())
    Fail(ErrorKind::kInput, "cell index " + std::to_string(cell_index) +
                                " out of range (" +
                                std::to_string(matrix.n_cells()) + " cells)");
  if (k > matrix.n_genes())
    Fail(ErrorKind::kInput, "sentence length exceeds gene count");
  const auto& row = matrix.cells[cell_index];
  std::vector<size_t> order(matrix.n_genes());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), [&](size_t a, size_t b) {
                      if (row[a] != row[b]) return row[a] > row[b];
                      return matrix.gene_names[a] < matrix.gene_names[b];
                    });
  CellSentence s;
  s.label = matrix.cell_labels[cell_index];
  for (size_t i = 0; i < k; ++i) s.ranked_genes.push_back(matrix.gene_names[order[i]]);
  return s;
}

std::string RenderSentence(const CellSentence& sentence, std::string_view label,
                           bool include_label) {
  std::string text;
  for (size_t i = 0; i < sentence.ranked_genes.size(); ++i) {
    if (i) text += ' ';
    text += sentence.ranked_genes[i];
  }
  text += kPromptSuffix;
  if (include_label) {
    text += ' ';
    text += label;
  }
  return text;
}

std::vector<std::string> RenderCorpus(const ExpressionMatrix& matrix, size_t k) {
  std::vector<std::string> lines;
  lines.reserve(matrix.n_cells());
  for (size_t i = 0; i < matrix.n_cells(); ++i) {
    const auto s = RankGenes(matrix, i, k);
    lines.push_back(RenderSentence(s, s.label, true));
  }
  return lines;
}

std::vector<GeneSpan> FindGeneSpans(std::string_view text) {
  std::vector<GeneSpan> spans;
  const size_t suffix = text.find(kPromptSuffix);
  if (suffix == std::string_view::npos) return spans;
  size_t start = 0;
  while (start < suffix) {
    size_t end = text.find(' ', start);
    if (end == std::string_view::npos || end > suffix) end = suffix;
    if (end > start) spans.push_back({start, end, std::string(text.substr(start, end - start))});
    start = end + 1;
  }
  return spans;
}

std::string ExtractLabel(std::string_view text) {
  const size_t suffix = text.find(kPromptSuffix);
  if (suffix == std::string_view::npos) return {};
  return std::string(Trim(text.substr(suffix + kPromptSuffix.size())));
}

std::string PromptPrefix(std::string_view text) {
  const size_t suffix = text.find(kPromptSuffix);
  if (suffix == std::string_view::npos) return std::string(text);
  return std::string(text.substr(0, suffix + kPromptSuffix.size()));
}

ExpressionMatrix ParseMatrixCsv(std::string_view text) {
  const auto lines = SplitLines(text);
  if (lines.empty()) Fail(ErrorKind::kParse, "line 1: missing header row");
  ExpressionMatrix m;
  auto header = Split(lines[0], ',');
  if (header.size() < 2 || header.back() != "label")
    Fail(ErrorKind::kParse, "line 1: header must be gene1,...,geneN,label");
  header.pop_back();
  std::unordered_set<std::string> seen;
  for (auto& g : header) {
    if (g.empty()) Fail(ErrorKind::kParse, "line 1: empty gene name");
    if (!seen.insert(g).second)
      Fail(ErrorKind::kParse, "line 1: duplicate gene name " + g);
  }
  m.gene_names = std::move(header);
  for (size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto where = ParseWhere(li + 1);
    auto fields = Split(lines[li], ',');
    if (fields.size() != m.gene_names.size() + 1)
      Fail(ErrorKind::kParse, where + ": expected " +
                                  std::to_string(m.gene_names.size() + 1) +
                                  " fields, got " + std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(m.gene_names.size());
    for (size_t g = 0; g < m.gene_names.size(); ++g) {
      const double v = ParseDouble(fields[g], where);
      if (!(v >= 0.0) || !std::isfinite(v))
        Fail(ErrorKind::kParse, where + ": negative or non-finite count for " +
                                    m.gene_names[g]);
      row.push_back(v);
    }
    m.cells.push_back(std::move(row));
    m.cell_labels.push_back(fields.back());
  }
  return m;
}

ExpressionMatrix LoadMatrixCsv(const std::string& path) {
  return ParseMatrixCsv(ReadFile(path));
}

std::string FormatMatrixCsv(const ExpressionMatrix& matrix) {
  matrix.Validate();
  std::string out;
  for (const auto& g : matrix.gene_names) {
    out += g;
    out += ',';
  }
  out += "label\n";
  for (size_t i = 0; i < matrix.n_cells(); ++i) {
    for (double v : matrix.cells[i]) {
      out += FormatDouble(v);
      out += ',';
    }
    out += matrix.cell_labels[i];
    out += '\n';
  }
  return out;
}

void WriteMatrixCsv(const ExpressionMatrix& matrix, const std::string& path) {
  WriteFile(path, FormatMatrixCsv(matrix));
}

std::pair<ExpressionMatrix, ExpressionMatrix> SplitMatrix(
    const ExpressionMatrix& matrix, double train_frac, uint64_t seed) {
  if (!(train_frac >= 0.0 && train_frac <= 1.0))
    Fail(ErrorKind::kConfig, "train_frac must lie in [0, 1]");
  const size_t n = matrix.n_cells();
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.Shuffle(perm.begin(), perm.end());
  const auto n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::vector<size_t> train_idx(perm.begin(), perm.begin() + static_cast<long>(n_train));
  std::vector<size_t> val_idx(perm.begin() + static_cast<long>(n_train), perm.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  auto take = [&](const std::vector<size_t>& idx) {
    ExpressionMatrix part;
    part.gene_names = matrix.gene_names;
    for (size_t i : idx) {
      part.cells.push_back(matrix.cells[i]);
      part.cell_labels.push_back(matrix.cell_labels[i]);
    }
    return part;
  };
  return {take(train_idx), take(val_idx)};
}

std::string FormatMarkers(const std::vector<MarkerSet>& markers) {
  std::string out;
  for (const auto& m : markers) {
    out += m.cell_type;
    out += '\t';
    for (size_t i = 0; i < m.genes.size(); ++i) {
      if (i) out += ',';
      out += m.genes[i];
    }
    out += '\n';
  }
  return out;
}

std::vector<MarkerSet> ParseMarkers(std::string_view text) {
  std::vector<MarkerSet> out;
  const auto lines = SplitLines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = Split(lines[i], '\t');
    if (fields.size() != 2)
      Fail(ErrorKind::kParse, ParseWhere(i + 1) + ": expected cell_type<TAB>genes");
    MarkerSet m;
    m.cell_type = fields[0];
    if (!fields[1].empty()) m.genes = Split(fields[1], ',');
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace cellcircuit
