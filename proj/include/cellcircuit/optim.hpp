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

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace cellcircuit {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a flat parameter buffer.
template <typename T>
class Adam {
 public:
  Adam(size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, T(0)), v_(n, T(0)) {}

  void Step(std::span<T> params, std::span<const T> grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m_[i]) / c1;
      const double vhat = static_cast<double>(v_[i]) / c2;
      params[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<T> m_, v_;
  long t_ = 0;
};

// Linear warmup over the first warmup_frac of steps, then constant.
inline double WarmupConstantLr(double max_lr, long step, long total_steps,
                               double warmup_frac) {
  const double warmup = std::floor(warmup_frac * static_cast<double>(total_steps));
  if (warmup >= 1.0 && static_cast<double>(step) < warmup)
    return max_lr * (static_cast<double>(step) + 1.0) / warmup;
  return max_lr;
}

// Linear warmup, then cosine decay to min_ratio * max_lr.
inline double WarmupCosineLr(double max_lr, long step, long total_steps,
                             double warmup_frac, double min_ratio) {
  const double warmup = std::floor(warmup_frac * static_cast<double>(total_steps));
  if (warmup >= 1.0 && static_cast<double>(step) < warmup)
    return max_lr * (static_cast<double>(step) + 1.0) / warmup;
  const double span = std::max(1.0, static_cast<double>(total_steps) - warmup);
  const double progress = std::min(1.0, (static_cast<double>(step) - warmup) / span);
  const double cosine = 0.5 * (1.0 + std::cos(M_PI * progress));
  return max_lr * (min_ratio + (1.0 - min_ratio) * cosine);
}

}  // namespace cellcircuit
