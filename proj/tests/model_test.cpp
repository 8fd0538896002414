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

#include "cellcircuit/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "cellcircuit/error.hpp"
#include "cellcircuit/rng.hpp"
#include "test_util.hpp"

namespace cellcircuit {
namespace {

ModelConfig TinyConfig() {
  ModelConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 16;
  cfg.max_context = 6;
  cfg.seed = 7;
  return cfg;
}

// Randomizes every parameter (including LN scales/shifts and biases) so no
// gradient group is trivially zero.
Model<double> RandomModel(const ModelConfig& cfg, uint64_t seed, double scale) {
  Model<double> m(cfg);
  Rng rng(seed);
  for (const auto& s : m.layout().specs) {
    const bool ln_scale = s.name.size() > 2 && s.name.substr(s.name.size() - 2) == ".g";
    for (size_t i = 0; i < s.numel(); ++i)
      m.params()[s.offset + i] = (ln_scale ? 1.0 : 0.0) + scale * rng.Normal();
  }
  return m;
}

TEST(ModelGradient, MatchesCentralDifferencesForEveryGroup) {
  const auto cfg = TinyConfig();
  auto model = RandomModel(cfg, 3, 0.5);
  const std::vector<int> ids = {1, 4, 9, 2, 7, 3};
  std::vector<double> grad(model.params().size(), 0.0);
  const double n_targets = static_cast<double>(ids.size() - 1);
  LossAndGradient<double>(model, ids, grad, 1.0 / n_targets);

  auto loss = [&]() {
    return SequenceLoss(model, ids, ExecutionMode<double>::Original()) / n_targets;
  };
  const double h = 1e-4;
  for (const auto& spec : model.layout().specs) {
    double worst = 0.0;
    for (size_t i = 0; i < spec.numel(); ++i) {
      double& p = model.params()[spec.offset + i];
      const double saved = p;
      p = saved + h;
      const double up = loss();
      p = saved - h;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, testing_util::RelativeError(grad[spec.offset + i], numeric));
    }
    EXPECT_LT(worst, 1e-4) << spec.name;
  }
}

TEST(ModelTraining, ZeroLearningRateLeavesParametersUnchanged) {
  auto cfg = TinyConfig();
  auto model = Model<float>::Initialized(cfg);
  const auto before = model;
  LmTrainConfig tc;
  tc.lr = 0.0;
  tc.steps = 1;
  tc.batch_tokens = 4;
  TrainLm(model, {{1, 2, 3, 4}, {5, 6, 7}}, tc);
  EXPECT_TRUE(model == before);
}

TEST(ModelTraining, LossDecreasesAndIsDeterministic) {
  auto cfg = TinyConfig();
  std::vector<std::vector<int>> seqs;
  for (int i = 0; i < 8; ++i) seqs.push_back({1, 2 + i % 3, 5, 6 + i % 2, 9});
  LmTrainConfig tc;
  tc.lr = 1e-2;
  tc.steps = 60;
  tc.batch_tokens = 16;
  tc.seed = 5;
  auto a = Model<float>::Initialized(cfg);
  auto b = Model<float>::Initialized(cfg);
  const auto ra = TrainLm(a, seqs, tc);
  const auto rb = TrainLm(b, seqs, tc);
  EXPECT_LT(ra.loss_curve.back(), 0.5 * ra.loss_curve.front());
  EXPECT_TRUE(a == b);
  EXPECT_EQ(ra.loss_curve, rb.loss_curve);
}

TEST(ModelForward, ContextOverflowIsAnInputError) {
  const auto cfg = TinyConfig();
  const auto model = Model<float>::Initialized(cfg);
  const std::vector<int> ids(cfg.max_context + 1, 1);
  try {
    RunForward(model, ids, ExecutionMode<float>::Original());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
  }
}

TEST(ModelForward, AttentionRowsAreCausalDistributions) {
  const auto cfg = TinyConfig();
  const auto model = RandomModel(cfg, 11, 0.7);
  const std::vector<int> ids = {0, 3, 3, 8, 10};
  const auto out = Forward(model, ids, ExecutionMode<double>::Original(), true);
  ASSERT_TRUE(out.trace.has_value());
  for (const auto& layer : out.trace->layers) {
    for (const auto& a : layer.attention) {
      for (int t = 0; t < a.rows(); ++t) {
        EXPECT_NEAR(a.row(t).sum(), 1.0, 1e-12);
        for (int s = 0; s < a.cols(); ++s) {
          EXPECT_GE(a(t, s), 0.0);
          if (s > t) EXPECT_EQ(a(t, s), 0.0);
        }
      }
    }
  }
}

TEST(ModelForward, CaptureReplayReproducesLogits) {
  const auto cfg = TinyConfig();
  const auto model = Model<float>::Initialized(cfg);
  const std::vector<int> ids = {2, 5, 1, 9};
  const auto out = Forward(model, ids, ExecutionMode<float>::Original(), true);
  const auto replay = ReplayLogits(model.Cast<double>(), *out.trace);
  EXPECT_LT((replay - out.logits).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ModelForward, LnFoldReproducesLayerNorm) {
  const auto cfg = TinyConfig();
  const auto model = RandomModel(cfg, 5, 0.6);
  const std::vector<int> ids = {4, 4, 2, 1, 0, 10};
  const auto cache = RunForward(model, ids, ExecutionMode<double>::Original());
  const auto session = CaptureSession(cache);
  const auto P = model.view();
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lc = session.layers[l];
    for (int t = 0; t < session.n_tokens(); ++t) {
      // affine(fold) applied to the raw pre-LN vector
      const RowVec<double> folded =
          ((lc.resid_mid.row(t).array() - lc.ln2.mean[t]) * lc.ln2.rstd[t] *
               P.ln2_g(l).array() + P.ln2_b(l).array()).matrix();
      EXPECT_LT((folded - lc.mlp_in.row(t)).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(ModelForward, AblatedWithZeroAttentionIsEmbeddingUnembeddingPath) {
  const auto cfg = TinyConfig();
  auto model = RandomModel(cfg, 9, 0.5);
  auto P = model.mutable_view();
  for (int l = 0; l < cfg.n_layers; ++l) P.wo(l).setZero();
  const std::vector<int> ids = {1, 2, 3};
  const auto out = Forward(model, ids, ExecutionMode<double>::MlpAblated(), false);
  Mat<double> x(3, cfg.d_model);
  for (int t = 0; t < 3; ++t) x.row(t) = P.wte().row(ids[t]) + P.wpe().row(t);
  Mat<double> expected(3, cfg.vocab_size);
  for (int t = 0; t < 3; ++t) {
    const double mean = x.row(t).mean();
    const double var = (x.row(t).array() - mean).square().mean();
    const RowVec<double> ln = ((x.row(t).array() - mean) / std::sqrt(var + 1e-5) *
                                   P.lnf_g().array() + P.lnf_b().array()).matrix();
    expected.row(t) = ln * P.w_unembed();
  }
  EXPECT_LT((expected - out.logits).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace cellcircuit
