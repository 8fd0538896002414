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

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cellcircuit {

// Row-major dense matrices; rows index tokens, columns index features.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using RowMap = Eigen::Map<RowVec<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowVec<T>>;

// One named tensor inside a flat parameter buffer.
struct TensorSpec {
  std::string name;
  std::vector<int64_t> shape;
  size_t offset = 0;  // in elements

  size_t numel() const {
    size_t n = 1;
    for (auto d : shape) n *= static_cast<size_t>(d);
    return n;
  }
  bool operator==(const TensorSpec&) const = default;
};

// Appends a tensor to a layout and returns its element offset.
inline size_t AddTensor(std::vector<TensorSpec>& specs, size_t& total,
                        std::string name, std::vector<int64_t> shape) {
  TensorSpec s{std::move(name), std::move(shape), total};
  total += s.numel();
  specs.push_back(std::move(s));
  return specs.back().offset;
}

template <typename T>
bool AllFinite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace cellcircuit
