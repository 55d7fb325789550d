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

#include "msga/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msga/error.hpp"

namespace msga {

namespace {

void check_pair(const MaskLogits& logits, const LabelMap& labels, const char* op) {
  if (logits.dim0() != labels.rows() || logits.dim1() != labels.cols())
    throw ShapeError(std::string(op) + ": logits grid " + shape_str(logits.dim0(), logits.dim1()) +
                     " vs labels " + shape_str(labels));
  if (logits.dim2() < 1) throw ShapeError(std::string(op) + ": no classes");
  for (Index i = 0; i < labels.size(); ++i) {
    const int y = labels.data()[i];
    if (y < 0 || y >= logits.dim2())
      throw ShapeError(std::string(op) + ": label " + std::to_string(y) + " outside 0.." +
                       std::to_string(logits.dim2() - 1));
  }
}

std::vector<int> flatten(const LabelMap& labels) {
  return {labels.data(), labels.data() + labels.size()};
}

constexpr double kFar = std::numeric_limits<double>::infinity();

/// Exact squared distance transform along one line: out[q] = min_p (q-p)² + f[p].
/// Cells with f = +inf contribute nothing.
void edt_line(const std::vector<double>& f, std::vector<double>& out) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v;
  std::vector<double> z;
  v.reserve(n);
  z.reserve(n + 1);
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kFar) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    double s = -kFar;
    while (!v.empty()) {
      const std::size_t p = v.back();
      s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q - p));
      if (s > z.back()) break;
      v.pop_back();
      z.pop_back();
      s = -kFar;
    }
    v.push_back(q);
    z.push_back(s);
  }
  out.assign(n, kFar);
  if (v.empty()) return;
  std::size_t k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (k + 1 < v.size() && z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = d * d + f[v[k]];
  }
}

/// Squared Euclidean distance from every cell to the nearest set cell.
Matrix squared_distance_to(const MatrixX<int>& mask) {
  const Index rows = mask.rows(), cols = mask.cols();
  Matrix d(rows, cols);
  std::vector<double> line, out;
  for (Index j = 0; j < cols; ++j) {
    line.assign(static_cast<std::size_t>(rows), kFar);
    for (Index i = 0; i < rows; ++i)
      if (mask(i, j)) line[static_cast<std::size_t>(i)] = 0.0;
    edt_line(line, out);
    for (Index i = 0; i < rows; ++i) d(i, j) = out[static_cast<std::size_t>(i)];
  }
  for (Index i = 0; i < rows; ++i) {
    line.assign(d.row(i).data(), d.row(i).data() + cols);
    edt_line(line, out);
    for (Index j = 0; j < cols; ++j) d(i, j) = out[static_cast<std::size_t>(j)];
  }
  return d;
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda", "must lie in [0, 1]");
  if (!(dice_smooth > 0.0)) throw ConfigError("dice-smooth", "must be positive");
}

LabelMap downsample_labels(const LabelMap& labels, Index factor) {
  if (factor < 1 || labels.rows() % factor != 0 || labels.cols() % factor != 0)
    throw ShapeError("downsample_labels: " + shape_str(labels) + " not divisible by " +
                     std::to_string(factor));
  LabelMap out(labels.rows() / factor, labels.cols() / factor);
  std::vector<int> counts;
  for (Index bi = 0; bi < out.rows(); ++bi)
    for (Index bj = 0; bj < out.cols(); ++bj) {
      const auto block = labels.block(bi * factor, bj * factor, factor, factor);
      counts.assign(static_cast<std::size_t>(block.maxCoeff()) + 1, 0);
      for (Index i = 0; i < factor; ++i)
        for (Index j = 0; j < factor; ++j) ++counts[static_cast<std::size_t>(block(i, j))];
      // max_element returns the first maximum, i.e. the lowest class on ties.
      out(bi, bj) = static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                                     counts.begin());
    }
  return out;
}

double cross_entropy(const MaskLogits& logits, const LabelMap& labels) {
  check_pair(logits, labels, "cross_entropy");
  const auto z = logits.as_matrix();
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const double peak = z.row(i).maxCoeff();
    const double lse = peak + std::log((z.row(i).array() - peak).exp().sum());
    total += lse - z(i, labels.data()[i]);
  }
  return total / static_cast<double>(z.rows());
}

double dice_loss(const MaskLogits& logits, const LabelMap& labels, double smooth) {
  check_pair(logits, labels, "dice_loss");
  const Matrix probs = softmax_rows(logits.as_matrix());
  const Index k = probs.cols();
  double acc = 0.0;
  for (Index c = 0; c < k; ++c) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (Index i = 0; i < probs.rows(); ++i) {
      const bool hit = labels.data()[i] == c;
      psum += probs(i, c);
      if (hit) {
        inter += probs(i, c);
        gsum += 1.0;
      }
    }
    acc += (2.0 * inter + smooth) / (psum + gsum + smooth);
  }
  return 1.0 - acc / static_cast<double>(k);
}

LossParts combined_loss(const MaskLogits& logits, const LabelMap& labels, const LossConfig& cfg) {
  cfg.validate();
  LossParts parts;
  parts.ce = cross_entropy(logits, labels);
  parts.dice = dice_loss(logits, labels, cfg.dice_smooth);
  if (cfg.lambda == 1.0) {
    parts.combined = parts.ce;
  } else if (cfg.lambda == 0.0) {
    parts.combined = parts.dice;
  } else {
    parts.combined = cfg.lambda * parts.ce + (1.0 - cfg.lambda) * parts.dice;
  }
  return parts;
}

LossIds build_loss(ad::Tape& tape, ad::ValueId logits, const LabelMap& labels,
                   const LossConfig& cfg) {
  cfg.validate();
  LossIds ids;
  ids.ce = tape.softmax_ce(logits, flatten(labels));
  ids.dice = tape.soft_dice(logits, flatten(labels), cfg.dice_smooth);
  if (cfg.lambda == 1.0) {
    ids.combined = ids.ce;
  } else if (cfg.lambda == 0.0) {
    ids.combined = ids.dice;
  } else {
    ids.combined = tape.add(tape.scale(ids.ce, cfg.lambda), tape.scale(ids.dice, 1.0 - cfg.lambda));
  }
  return ids;
}

double dice_score(const LabelMap& pred, const LabelMap& gt, int cls) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("dice_score: " + shape_str(pred) + " vs " + shape_str(gt));
  Index p = 0, g = 0, both = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool in_p = pred.data()[i] == cls;
    const bool in_g = gt.data()[i] == cls;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double hd95_empty_sentinel(Index rows, Index cols) {
  return std::sqrt(static_cast<double>(rows * rows + cols * cols));
}

MatrixX<int> hd95_point_mask(const LabelMap& labels, int cls, Hd95Points points) {
  const Index rows = labels.rows(), cols = labels.cols();
  MatrixX<int> in = (labels.array() == cls).cast<int>();
  if (points == Hd95Points::FullMask) return in;
  MatrixX<int> edge = MatrixX<int>::Zero(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      if (!in(i, j)) continue;
      const bool interior = i > 0 && j > 0 && i + 1 < rows && j + 1 < cols && in(i - 1, j) &&
                            in(i + 1, j) && in(i, j - 1) && in(i, j + 1);
      edge(i, j) = interior ? 0 : 1;
    }
  return edge;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const LabelMap& pred, const LabelMap& gt, int cls, Hd95Points points) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("hd95: " + shape_str(pred) + " vs " + shape_str(gt));
  const MatrixX<int> a = hd95_point_mask(pred, cls, points);
  const MatrixX<int> b = hd95_point_mask(gt, cls, points);
  const bool a_empty = a.sum() == 0, b_empty = b.sum() == 0;
  if (a_empty && b_empty) return 0.0;
  if (a_empty || b_empty) return hd95_empty_sentinel(pred.rows(), pred.cols());

  const Matrix to_b = squared_distance_to(b);
  const Matrix to_a = squared_distance_to(a);
  std::vector<double> dists;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.data()[i]) dists.push_back(std::sqrt(to_b.data()[i]));
    if (b.data()[i]) dists.push_back(std::sqrt(to_a.data()[i]));
  }
  return percentile(std::move(dists), 95.0);
}

}  // namespace msga
