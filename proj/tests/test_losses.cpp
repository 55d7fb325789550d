// Copyright (c) 2026 The msga Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include "msga/losses.hpp"
#include "msga/tape.hpp"
#include "oracles.hpp"

using namespace msga;

namespace {

MaskLogits random_logits(Index h, Index w, Index k, std::mt19937_64& gen, double scale = 2.0) {
  MaskLogits m(h, w, k);
  m.as_matrix() = oracle::random_matrix(h * w, k, gen, scale);
  return m;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("downsample_labels") {
  LabelMap c = LabelMap::Constant(8, 8, 2);
  CHECK(downsample_labels(c, 4) == LabelMap::Constant(2, 2, 2));

  std::mt19937_64 gen(1);
  const LabelMap r = oracle::random_labels(6, 6, 4, gen);
  CHECK(downsample_labels(r, 1) == r);
  CHECK(downsample_labels(downsample_labels(r, 1), 1) == r);

  LabelMap m(4, 4);
  m << 1, 1, 0, 2,
       1, 0, 2, 2,
       0, 0, 1, 2,
       0, 0, 1, 0;
  LabelMap expect(2, 2);
  expect << 1, 2,
            0, 1;  // bottom-right block: 1,2,1,0 -> class 1 wins 2-1-1
  CHECK(downsample_labels(m, 2) == expect);

  LabelMap tie(2, 2);
  tie << 2, 1, 1, 2;
  CHECK(downsample_labels(tie, 2)(0, 0) == 1);
  CHECK_THROWS_AS(downsample_labels(m, 3), ShapeError);
}

TEST_CASE("downsample commutes with label permutation") {
  std::mt19937_64 gen(2);
  const int perm[3] = {2, 0, 1};
  for (int t = 0; t < 50; ++t) {
    const LabelMap r = oracle::random_labels(6, 6, 3, gen);
    LabelMap pr = r;
    for (Index i = 0; i < r.size(); ++i) pr.data()[i] = perm[r.data()[i]];
    const LabelMap a = downsample_labels(r, 3), b = downsample_labels(pr, 3);
    // Ties may resolve differently under relabelling; only compare unique majorities.
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) {
        int counts[3] = {0, 0, 0};
        for (Index u = 0; u < 3; ++u)
          for (Index v = 0; v < 3; ++v) ++counts[r(3 * i + u, 3 * j + v)];
        const int top = *std::max_element(counts, counts + 3);
        if (std::count(counts, counts + 3, top) == 1) CHECK(b(i, j) == perm[a(i, j)]);
      }
  }
}

TEST_CASE("cross_entropy closed forms") {
  MaskLogits uniform(2, 2, 2);
  LabelMap y(2, 2);
  y << 0, 1, 1, 0;
  CHECK(cross_entropy(uniform, y) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  MaskLogits sure(2, 2, 2);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) sure(i, j, y(i, j)) = 1000.0;
  CHECK(cross_entropy(sure, y) < 1e-300);

  std::mt19937_64 gen(3);
  const MaskLogits m = random_logits(2, 2, 3, gen);
  const LabelMap z = oracle::random_labels(2, 2, 3, gen);
  CHECK(std::abs(cross_entropy(m, z) - oracle::cross_entropy(m, z)) < 1e-14);
  CHECK_THROWS_AS(cross_entropy(m, LabelMap::Zero(3, 2)), ShapeError);
}

TEST_CASE("dice_loss cases") {
  LabelMap y(2, 2);
  y << 0, 1, 1, 1;
  MaskLogits perfect(2, 2, 2);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) perfect(i, j, y(i, j)) = 800.0;
  CHECK(dice_loss(perfect, y, 1e-5) < 1e-6);

  // k = 2, all mass on class 1 while ground truth is entirely background.
  MaskLogits wrong(2, 2, 2);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) wrong(i, j, 1) = 800.0;
  const double loss = dice_loss(wrong, LabelMap::Zero(2, 2), 1e-5);
  CHECK(loss > 0.999);
  CHECK(loss < 1.0);

  std::mt19937_64 gen(4);
  for (int t = 0; t < 20; ++t) {
    const MaskLogits m = random_logits(2, 2, 2, gen);
    const LabelMap z = oracle::random_labels(2, 2, 2, gen);
    CHECK(std::abs(dice_loss(m, z, 1e-5) - oracle::dice_loss(m, z, 1e-5)) < 1e-14);
    CHECK(dice_loss(m, z, 1e-5) >= 0.0);
    CHECK(dice_loss(m, z, 1e-5) < 1.0);
  }
}

TEST_CASE("combined_loss endpoints and mix") {
  std::mt19937_64 gen(5);
  const MaskLogits m = random_logits(3, 3, 3, gen);
  const LabelMap y = oracle::random_labels(3, 3, 3, gen);
  LossConfig cfg;
  cfg.lambda = 1.0;
  CHECK(combined_loss(m, y, cfg).combined == cross_entropy(m, y));
  cfg.lambda = 0.0;
  CHECK(combined_loss(m, y, cfg).combined == dice_loss(m, y, cfg.dice_smooth));
  cfg.lambda = 0.2;
  const LossParts p = combined_loss(m, y, cfg);
  CHECK(std::abs(p.combined - (0.2 * p.ce + 0.8 * p.dice)) < 1e-15);
  CHECK(p.combined >= std::min(p.ce, p.dice));
  CHECK(p.combined <= std::max(p.ce, p.dice));

  cfg.lambda = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg.lambda = 0.5;
  cfg.dice_smooth = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("convexity over lambda") {
  std::mt19937_64 gen(6);
  for (int t = 0; t < 30; ++t) {
    const MaskLogits m = random_logits(2, 3, 3, gen, 4.0);
    const LabelMap y = oracle::random_labels(2, 3, 3, gen);
    LossConfig cfg;
    cfg.lambda = std::uniform_real_distribution<double>(0, 1)(gen);
    const LossParts p = combined_loss(m, y, cfg);
    CHECK(p.combined >= std::min(p.ce, p.dice) - 1e-15);
    CHECK(p.combined <= std::max(p.ce, p.dice) + 1e-15);
  }
}

TEST_CASE("tape loss agrees with the direct loss") {
  std::mt19937_64 gen(7);
  const MaskLogits m = random_logits(3, 4, 3, gen);
  const LabelMap y = oracle::random_labels(3, 4, 3, gen);
  ad::Tape t;
  const LossIds ids = build_loss(t, t.parameter(Matrix(m.as_matrix())), y, LossConfig{});
  const LossParts p = combined_loss(m, y, LossConfig{});
  CHECK(std::abs(t.scalar(ids.ce) - p.ce) < 1e-14);
  CHECK(std::abs(t.scalar(ids.dice) - p.dice) < 1e-14);
  CHECK(std::abs(t.scalar(ids.combined) - p.combined) < 1e-14);
}

TEST_CASE("loss gradients on 2x2x2 instances") {
  std::mt19937_64 gen(8);
  for (int t = 0; t < 5; ++t) {
    const LabelMap y = oracle::random_labels(2, 2, 2, gen);
    const Matrix logits = oracle::random_matrix(4, 2, gen);
    for (double lambda : {0.0, 1.0, 0.2}) {
      LossConfig cfg;
      cfg.lambda = lambda;
      const double err = ad::finite_diff_check(
          [&](ad::Tape& tape, std::span<const ad::ValueId> p) {
            return build_loss(tape, p[0], y, cfg).combined;
          },
          {logits}, 1e-5);
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("dice_score examples") {
  LabelMap a = LabelMap::Zero(4, 4), b = LabelMap::Zero(4, 4);
  CHECK(dice_score(a, b, 1) == 1.0);
  a(0, 0) = 1;
  CHECK(dice_score(a, a, 1) == 1.0);
  b(3, 3) = 1;
  CHECK(dice_score(a, b, 1) == 0.0);

  // |P| = 4, |G| = 6, overlap 3
  LabelMap p = LabelMap::Zero(4, 4), g = LabelMap::Zero(4, 4);
  p.row(0).setConstant(1);
  g.row(0).head(3).setConstant(1);
  g.row(1).head(3).setConstant(1);
  CHECK(dice_score(p, g, 1) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(dice_score(g, p, 1) == dice_score(p, g, 1));
}

TEST_CASE("dice_score matches set arithmetic") {
  std::mt19937_64 gen(9);
  for (int t = 0; t < 200; ++t) {
    const LabelMap p = oracle::random_labels(6, 6, 3, gen);
    const LabelMap g = oracle::random_labels(6, 6, 3, gen);
    for (int c = 0; c < 3; ++c) CHECK(dice_score(p, g, c) == oracle::dice_score(p, g, c));
  }
}

TEST_CASE("hd95 examples") {
  std::mt19937_64 gen(10);
  const LabelMap r = oracle::random_labels(8, 8, 2, gen);
  CHECK(hd95(r, r, 1) == 0.0);

  LabelMap a = LabelMap::Zero(6, 6), b = LabelMap::Zero(6, 6);
  a(0, 0) = 1;
  b(3, 4) = 1;
  CHECK(hd95(a, b, 1) == 5.0);
  CHECK(hd95(a, b, 1, Hd95Points::FullMask) == 5.0);

  const LabelMap empty = LabelMap::Zero(6, 8);
  LabelMap one = empty;
  one(2, 2) = 1;
  CHECK(hd95(empty, empty, 1) == 0.0);
  CHECK(hd95(one, empty, 1) == 10.0);
  CHECK(hd95(empty, one, 1) == hd95_empty_sentinel(6, 8));
  CHECK_THROWS_AS(hd95(one, LabelMap::Zero(6, 6), 1), ShapeError);
}

TEST_CASE("hd95 matches the all-pairs oracle") {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 300; ++t) {
    const LabelMap p = oracle::random_labels(8, 8, 3, gen);
    const LabelMap g = oracle::random_labels(8, 8, 3, gen);
    for (int c = 1; c < 3; ++c) {
      CHECK(hd95(p, g, c) == oracle::hd95(p, g, c, true));
      CHECK(hd95(p, g, c, Hd95Points::FullMask) == oracle::hd95(p, g, c, false));
      CHECK(hd95(p, g, c) == hd95(g, p, c));
    }
  }
}

TEST_CASE("boundary point set") {
  LabelMap m = LabelMap::Zero(5, 5);
  m.block(1, 1, 3, 3).setConstant(1);
  const MatrixX<int> edge = hd95_point_mask(m, 1, Hd95Points::Boundary);
  CHECK(edge.sum() == 8);
  CHECK(edge(2, 2) == 0);
  // Pixels touching the image border count as boundary.
  CHECK(hd95_point_mask(LabelMap::Ones(3, 3), 1, Hd95Points::Boundary).sum() == 8);
  CHECK(hd95_point_mask(m, 1, Hd95Points::FullMask).sum() == 9);
}

TEST_CASE("percentile interpolation") {
  CHECK(percentile({4.0, 1.0, 3.0, 2.0}, 50.0) == 2.5);
  CHECK(percentile({7.0}, 95.0) == 7.0);
  CHECK(percentile({0.0, 10.0}, 95.0) == doctest::Approx(9.5));
  CHECK_THROWS(percentile({}, 50.0));
}

}  // TEST_SUITE
