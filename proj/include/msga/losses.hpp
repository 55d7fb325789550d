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

#pragma once

#include <span>
#include <vector>

#include "msga/linalg.hpp"
#include "msga/tape.hpp"

namespace msga {

struct LossConfig {
  double lambda = 0.2;  // weight on cross-entropy; dice gets 1 - lambda
  double dice_smooth = 1e-5;

  void validate() const;
};

struct LossParts {
  double ce = 0.0;
  double dice = 0.0;
  double combined = 0.0;
};

/// Majority class of each p x p block, ties to the lowest class index.
LabelMap downsample_labels(const LabelMap& labels, Index factor);

/// Mean over cells of -log softmax(M)[y].
double cross_entropy(const MaskLogits& logits, const LabelMap& labels);

/// 1 - mean over all k classes (background included) of the smoothed soft
/// dice coefficient between softmax(M) and one-hot(y).
double dice_loss(const MaskLogits& logits, const LabelMap& labels, double smooth);

/// lambda * CE + (1 - lambda) * Dice.
LossParts combined_loss(const MaskLogits& logits, const LabelMap& labels, const LossConfig& cfg);

struct LossIds {
  ad::ValueId ce;
  ad::ValueId dice;
  ad::ValueId combined;
};

/// Records the same loss on a tape over a tokens x classes logit node.
LossIds build_loss(ad::Tape& tape, ad::ValueId logits, const LabelMap& labels,
                   const LossConfig& cfg);

/// 2|P∩G| / (|P|+|G|) for class `cls`; 1 when both sets are empty.
double dice_score(const LabelMap& pred, const LabelMap& gt, int cls);

enum class Hd95Points {
  Boundary,  // mask pixels with a 4-neighbour outside the mask or the image
  FullMask,
};

/// Returned when exactly one of the two masks is empty: the image diagonal.
double hd95_empty_sentinel(Index rows, Index cols);

/// 95th percentile (linear interpolation between order statistics) of the
/// pooled directed nearest-neighbour distances P->G and G->P, in pixels.
double hd95(const LabelMap& pred, const LabelMap& gt, int cls,
            Hd95Points points = Hd95Points::Boundary);

/// Point set used by hd95 for one class, as a binary mask.
MatrixX<int> hd95_point_mask(const LabelMap& labels, int cls, Hd95Points points);

/// Linear-interpolated percentile of an unsorted sample, q in [0, 100].
double percentile(std::vector<double> values, double q);

}  // namespace msga
