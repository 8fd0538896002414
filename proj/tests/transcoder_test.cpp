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

#include "cellcircuit/transcoder.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "cellcircuit/error.hpp"
#include "cellcircuit/rng.hpp"
#include "test_util.hpp"

namespace cellcircuit {
namespace {

Transcoder<double> RandomTc(int d, int h, uint64_t seed, double bias = 0.1) {
  Transcoder<double> tc(0, d, h);
  Rng rng(seed);
  for (auto& p : tc.params()) p = rng.Normal();
  for (int i = 0; i < h; ++i) tc.b_enc()(i) = bias + 0.5 * rng.Normal();
  return tc;
}

Mat<double> RandomMat(long rows, long cols, uint64_t seed) {
  Rng rng(seed);
  Mat<double> m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.Normal();
  return m;
}

TEST(Encode, ZeroInputZeroBiasIsZero) {
  auto tc = RandomTc(4, 8, 1);
  tc.b_enc().setZero();
  EXPECT_TRUE(tc.Encode(Mat<double>::Zero(3, 4)).isZero(0.0));
}

TEST(Encode, VeryNegativeBiasClampsToZero) {
  auto tc = RandomTc(4, 8, 2);
  tc.b_enc().setConstant(-1e6);
  EXPECT_TRUE(tc.Encode(RandomMat(5, 4, 3)).isZero(0.0));
}

TEST(Encode, MatchesScalarLoop) {
  const auto tc = RandomTc(4, 8, 4);
  const auto x = RandomMat(6, 4, 5);
  const auto z = tc.Encode(x);
  for (long t = 0; t < x.rows(); ++t)
    for (int i = 0; i < 8; ++i) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += tc.w_enc()(i, k) * x(t, k);
      acc += tc.b_enc()(i);
      EXPECT_NEAR(z(t, i), acc > 0 ? acc : 0.0, 1e-13);  // summation order differs
      EXPECT_GE(z(t, i), 0.0);
    }
}

TEST(Decode, ZeroOneHotAndScalarLoop) {
  const auto tc = RandomTc(4, 8, 6);
  EXPECT_EQ(tc.Decode(Mat<double>::Zero(1, 8)).row(0), tc.b_dec());
  Mat<double> one = Mat<double>::Zero(1, 8);
  one(0, 3) = 1.0;
  EXPECT_EQ(tc.Decode(one).row(0), tc.w_dec().col(3).transpose() + tc.b_dec());

  const Mat<double> z = RandomMat(5, 8, 7).cwiseAbs();
  const auto xh = tc.Decode(z);
  for (long t = 0; t < z.rows(); ++t)
    for (int k = 0; k < 4; ++k) {
      double acc = 0.0;
      for (int i = 0; i < 8; ++i) acc += tc.w_dec()(k, i) * z(t, i);
      EXPECT_NEAR(xh(t, k), acc + tc.b_dec()(k), 1e-13);
    }
}

TEST(Loss, PerfectZeroCodeReconstructionIsZero) {
  auto tc = RandomTc(3, 6, 8);
  tc.b_enc().setConstant(-1e6);
  const auto x = RandomMat(4, 3, 9);
  Mat<double> target(4, 3);
  target.rowwise() = tc.b_dec();
  const auto l = ComputeLoss(tc, x, target, 0.5);
  EXPECT_EQ(l.total, 0.0);
  EXPECT_EQ(l.mse, 0.0);
  EXPECT_EQ(l.l1, 0.0);
}

TEST(Loss, ZeroLambdaIsMse) {
  const auto tc = RandomTc(3, 6, 10);
  const auto x = RandomMat(4, 3, 11), y = RandomMat(4, 3, 12);
  const auto l = ComputeLoss(tc, x, y, 0.0);
  EXPECT_EQ(l.total, l.mse);
  EXPECT_GT(l.l1, 0.0);
}

// Hand-written scalar reference on a fixed 3-dimensional instance.
TEST(Loss, MatchesScalarReference) {
  Transcoder<double> tc(0, 3, 4);
  const double w_enc[4][3] = {{0.5, -1.0, 0.25}, {1.0, 0.0, -0.5}, {-0.3, 0.8, 0.1}, {0.2, 0.2, 0.2}};
  const double b_enc[4] = {0.1, -0.2, 0.05, -1.0};
  const double w_dec[3][4] = {{1, 0, 0.5, -1}, {0, 1, -0.5, 0.25}, {0.3, 0.3, 0.3, 0.3}};
  const double b_dec[3] = {0.01, -0.02, 0.03};
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 3; ++k) tc.w_enc()(i, k) = w_enc[i][k];
    tc.b_enc()(i) = b_enc[i];
  }
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 4; ++i) tc.w_dec()(k, i) = w_dec[k][i];
    tc.b_dec()(k) = b_dec[k];
  }
  const double xs[2][3] = {{1.0, 0.5, -2.0}, {-0.4, 1.2, 0.7}};
  const double ys[2][3] = {{0.2, -0.1, 0.4}, {1.0, 0.0, -0.3}};
  Mat<double> x(2, 3), y(2, 3);
  double mse = 0.0, l1 = 0.0;
  for (int t = 0; t < 2; ++t) {
    double z[4];
    for (int i = 0; i < 4; ++i) {
      double a = b_enc[i];
      for (int k = 0; k < 3; ++k) a += w_enc[i][k] * xs[t][k];
      z[i] = a > 0 ? a : 0;
      l1 += z[i];
    }
    for (int k = 0; k < 3; ++k) {
      double xh = b_dec[k];
      for (int i = 0; i < 4; ++i) xh += w_dec[k][i] * z[i];
      mse += (xh - ys[t][k]) * (xh - ys[t][k]);
      x(t, k) = xs[t][k];
      y(t, k) = ys[t][k];
    }
  }
  mse /= 2;
  l1 /= 2;
  const auto l = ComputeLoss(tc, x, y, 0.3);
  EXPECT_NEAR(l.mse, mse, 1e-10);
  EXPECT_NEAR(l.l1, l1, 1e-10);
  EXPECT_NEAR(l.total, mse + 0.3 * l1, 1e-10);
}

TEST(Loss, NonFiniteInputIsNumericError) {
  const auto tc = RandomTc(3, 6, 13);
  auto x = RandomMat(2, 3, 14);
  x(1, 2) = NAN;
  try {
    ComputeLoss(tc, x, x, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(Gradient, MatchesCentralDifferencesForEveryGroup) {
  auto tc = RandomTc(4, 8, 15);
  const auto x = RandomMat(6, 4, 16), y = RandomMat(6, 4, 17);
  const double lambda = 0.3;
  std::vector<double> grad(tc.params().size());
  LossAndGradient<double>(tc, x, y, lambda, grad);
  const double h = 1e-5;
  for (const auto& spec : tc.specs()) {
    double worst = 0.0;
    for (size_t i = 0; i < spec.numel(); ++i) {
      double& p = tc.params()[spec.offset + i];
      const double saved = p;
      p = saved + h;
      const double up = ComputeLoss(tc, x, y, lambda).total;
      p = saved - h;
      const double down = ComputeLoss(tc, x, y, lambda).total;
      p = saved;
      worst = std::max(worst, testing_util::RelativeError(grad[spec.offset + i], (up - down) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-4) << spec.name;
  }
}

// Inputs from a fixed random MLP-like map, shared by the training tests.
struct Stream {
  Mat<float> x, y;
};

Stream MakeStream(long n = 2048) {
  const auto x = RandomMat(n, 8, 20);
  const auto w = RandomMat(8, 8, 21);
  Stream s;
  s.x = x.cast<float>();
  s.y = (x * w).cwiseMax(0.0).cast<float>();
  return s;
}

TranscoderTrainConfig SmallTrain(double lambda) {
  TranscoderTrainConfig c;
  c.max_lr = 3e-3;
  c.tokens_per_batch = 128;
  c.l1_coefficient = lambda;
  c.total_tokens = 128 * 300;
  c.seed = 3;
  return c;
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto s = MakeStream(256);
  auto tc = Transcoder<float>::Initialized(0, 8, 32, 1);
  const auto before = tc;
  auto cfg = SmallTrain(0.01);
  cfg.max_lr = 0.0;
  cfg.total_tokens = 512;
  const auto r = TrainTranscoder(tc, s.x, s.y, cfg);
  EXPECT_TRUE(tc == before);
  EXPECT_EQ(r.loss_curve.size(), 4u);
}

TEST(Train, DeterministicUnitDecoderAndLossDrops) {
  const auto s = MakeStream();
  auto a = Transcoder<float>::Initialized(0, 8, 32, 1), b = a;
  const auto ra = TrainTranscoder(a, s.x, s.y, SmallTrain(0.01));
  TrainTranscoder(b, s.x, s.y, SmallTrain(0.01));
  EXPECT_TRUE(a == b);
  EXPECT_LT(ra.loss_curve.back(), 0.5 * ra.loss_curve.front());
  for (int i = 0; i < a.hidden(); ++i) EXPECT_NEAR(a.w_dec().col(i).norm(), 1.0f, 1e-5f);
}

// Pinned on this stream: L0 about 17.8 at 0.05 and 14.5 at 0.5.
TEST(Train, TenfoldLambdaLowersL0) {
  const auto s = MakeStream();
  auto lo = Transcoder<float>::Initialized(0, 8, 32, 1), hi = lo;
  const auto rl = TrainTranscoder(lo, s.x, s.y, SmallTrain(0.05));
  const auto rh = TrainTranscoder(hi, s.x, s.y, SmallTrain(0.5));
  EXPECT_LT(rh.stats.mean_l0, rl.stats.mean_l0);
  EXPECT_FALSE(rh.stats.LiveFeatures().empty());
  EXPECT_GE(hi.Encode(s.x).minCoeff(), 0.0f);
}

TEST(Stats, AllZeroInputsWithNonPositiveBiasAreDead) {
  auto tc = RandomTc(4, 8, 30, 0.0);
  tc.b_enc() = -tc.b_enc().cwiseAbs();
  const auto st = ComputeStats(tc, Mat<double>(Mat<double>::Zero(10, 4)));
  EXPECT_EQ(st.mean_l0, 0.0);
  EXPECT_EQ(st.dead_count, 8);
  EXPECT_TRUE(st.LiveFeatures().empty());
}

TEST(Stats, ExactlyTwoFeaturesOnOneToken) {
  Transcoder<double> tc(0, 2, 8);
  tc.b_enc().setConstant(-1.0);
  tc.b_enc()(2) = 1.0;
  tc.b_enc()(5) = 0.5;
  const auto st = ComputeStats(tc, Mat<double>(Mat<double>::Zero(1, 2)));
  EXPECT_EQ(st.mean_l0, 2.0);
  for (int f = 0; f < 8; ++f) EXPECT_EQ(st.activation_prob[f], f == 2 || f == 5 ? 1.0 : 0.0);
  EXPECT_EQ(st.LiveFeatures(), (std::vector<int>{2, 5}));
}

TEST(Stats, OnePassEqualsRecount) {
  const auto tc = RandomTc(4, 8, 31, -0.5);
  const auto x = RandomMat(9000, 4, 32);  // spans several internal chunks
  const auto st = ComputeStats(tc, x);
  const auto z = tc.Encode(x);
  double l0 = 0.0;
  for (int f = 0; f < 8; ++f) {
    long count = 0;
    for (long t = 0; t < z.rows(); ++t) count += z(t, f) > 0.0;
    EXPECT_DOUBLE_EQ(st.activation_prob[f], static_cast<double>(count) / z.rows());
    l0 += count;
  }
  EXPECT_NEAR(st.mean_l0, l0 / z.rows(), 1e-12);
}

}  // namespace
}  // namespace cellcircuit
