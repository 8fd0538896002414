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

namespace cellcircuit {

// Suffix appended after the ranked gene list of every cell sentence.
inline constexpr std::string_view kPromptSuffix =
    ". The corresponding cell type is:";

struct ExpressionMatrix {
  std::vector<std::string> gene_names;
  std::vector<std::vector<double>> cells;  // one row per cell, count units
  std::vector<std::string> cell_labels;

  size_t n_cells() const { return cells.size(); }
  size_t n_genes() const { return gene_names.size(); }

  // Throws kInput when any invariant (shape, uniqueness, counts >= 0) fails.
  void Validate() const;

  bool operator==(const ExpressionMatrix&) const = default;
};

struct CellSentence {
  std::vector<std::string> ranked_genes;
  std::string label;
};

struct SyntheticSpec {
  int n_genes = 50;
  int n_cell_types = 4;
  int markers_per_type = 3;
  double marker_boost = 20.0;
  int cells_per_type = 500;
  int sentence_length = 20;
  uint64_t seed = 1;
  // Background Poisson rates are drawn uniformly from this range per gene.
  double base_rate_min = 0.5;
  double base_rate_max = 5.0;

  void Validate() const;
};

struct MarkerSet {
  std::string cell_type;
  std::vector<std::string> genes;

  bool operator==(const MarkerSet&) const = default;
};

struct SyntheticCorpus {
  ExpressionMatrix matrix;
  std::vector<MarkerSet> markers;  // one entry per cell type, type order
  std::vector<double> base_rates;  // per gene
};

// Gene symbols used for synthetic genes, in assignment order. Falls back to
// "GENE<n>" once the built-in symbol list is exhausted.
std::vector<std::string> SyntheticGeneNames(int n);
std::vector<std::string> SyntheticCellTypeNames(int n);

SyntheticCorpus GenerateSynthetic(const SyntheticSpec& spec);

// Genes sorted by count descending, ties broken by ascending symbol, then
// truncated to k. The returned label is the cell's matrix label.
CellSentence RankGenes(const ExpressionMatrix& matrix, size_t cell_index,
                       size_t k);

std::string RenderSentence(const CellSentence& sentence,
                           std::string_view label, bool include_label);

// Renders every cell in training form (label included).
std::vector<std::string> RenderCorpus(const ExpressionMatrix& matrix,
                                      size_t k);

// Byte span [begin, end) of one gene symbol inside a rendered sentence.
struct GeneSpan {
  size_t begin = 0;
  size_t end = 0;
  std::string gene;
};

// Locates the gene symbols of a rendered sentence or prompt. Text without
// the prompt suffix yields no spans.
std::vector<GeneSpan> FindGeneSpans(std::string_view text);

// Label following the prompt suffix, or empty when absent.
std::string ExtractLabel(std::string_view text);

// Prompt form of a sentence: everything up to and including the suffix.
std::string PromptPrefix(std::string_view text);

ExpressionMatrix ParseMatrixCsv(std::string_view text);
ExpressionMatrix LoadMatrixCsv(const std::string& path);
std::string FormatMatrixCsv(const ExpressionMatrix& matrix);
void WriteMatrixCsv(const ExpressionMatrix& matrix, const std::string& path);

// By-cell split. Returned parts keep the original relative cell order.
std::pair<ExpressionMatrix, ExpressionMatrix> SplitMatrix(
    const ExpressionMatrix& matrix, double train_frac, uint64_t seed);

std::string FormatMarkers(const std::vector<MarkerSet>& markers);
std::vector<MarkerSet> ParseMarkers(std::string_view text);

}  // namespace cellcircuit
