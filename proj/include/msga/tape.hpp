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

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "msga/linalg.hpp"

/// Reverse-mode differentiation over a fixed set of matrix operations.
///
/// Every call to `record` evaluates the forward value eagerly and appends a
/// node; inputs always refer to earlier nodes, so the node list is already in
/// topological order and `backward` is a single reverse sweep.
namespace msga::ad {

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  AddRow,  // N x d plus a broadcast 1 x d row
  Scale,
  Gelu,  // tanh approximation
  LayerNorm,
  SoftmaxCE,
  SoftDice,
  Reshape,
  Patchify,
  Mean,
  EmbedLookup,
  Transpose,
  RowSoftmax,
};

std::string_view op_name(OpKind kind);

struct ValueId {
  std::size_t index = 0;
  auto operator<=>(const ValueId&) const = default;
};

struct ReshapeAttr {
  Index rows = 0;
  Index cols = 0;
};
struct PatchAttr {
  Index patch = 1;
};
/// Integer class targets, one per logit row.
struct LabelAttr {
  std::vector<int> labels;
  double smooth = 1e-5;  // dice only
};
struct IndexAttr {
  std::vector<Index> rows;
};
using OpAttr = std::variant<std::monostate, double, ReshapeAttr, PatchAttr, LabelAttr, IndexAttr>;

inline constexpr double kLayerNormEps = 1e-5;

struct TapeNode {
  OpKind kind = OpKind::Leaf;
  std::vector<ValueId> inputs;
  OpAttr attr;
  Matrix value;
  std::vector<Matrix> saved;
  bool is_parameter = false;
};

using Gradients = std::map<ValueId, Matrix>;

class Tape {
 public:
  ValueId parameter(Matrix value);
  ValueId constant(Matrix value);

  /// Generic entry point; the typed helpers below forward here.
  ValueId record(OpKind kind, std::vector<ValueId> inputs, OpAttr attr = {});

  ValueId matmul(ValueId a, ValueId b) { return record(OpKind::MatMul, {a, b}); }
  ValueId add(ValueId a, ValueId b) { return record(OpKind::Add, {a, b}); }
  ValueId add_row(ValueId x, ValueId row) { return record(OpKind::AddRow, {x, row}); }
  ValueId scale(ValueId a, double factor) { return record(OpKind::Scale, {a}, factor); }
  ValueId gelu(ValueId a) { return record(OpKind::Gelu, {a}); }
  ValueId layernorm(ValueId x, ValueId gain, ValueId bias) {
    return record(OpKind::LayerNorm, {x, gain, bias});
  }
  ValueId softmax_ce(ValueId logits, std::vector<int> labels) {
    return record(OpKind::SoftmaxCE, {logits}, LabelAttr{std::move(labels), 0.0});
  }
  ValueId soft_dice(ValueId logits, std::vector<int> labels, double smooth) {
    return record(OpKind::SoftDice, {logits}, LabelAttr{std::move(labels), smooth});
  }
  ValueId reshape(ValueId a, Index rows, Index cols) {
    return record(OpKind::Reshape, {a}, ReshapeAttr{rows, cols});
  }
  ValueId patchify(ValueId image, Index patch) {
    return record(OpKind::Patchify, {image}, PatchAttr{patch});
  }
  ValueId mean(ValueId a) { return record(OpKind::Mean, {a}); }
  ValueId embed_lookup(ValueId table, std::vector<Index> rows) {
    return record(OpKind::EmbedLookup, {table}, IndexAttr{std::move(rows)});
  }
  ValueId transpose(ValueId a) { return record(OpKind::Transpose, {a}); }
  ValueId row_softmax(ValueId a) { return record(OpKind::RowSoftmax, {a}); }

  const Matrix& value(ValueId id) const { return node(id).value; }
  double scalar(ValueId id) const;
  const TapeNode& node(ValueId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<ValueId>& parameters() const noexcept { return params_; }

  /// Reverse sweep from a 1x1 loss. Every registered parameter appears in the
  /// result; those with no path to the loss get an exact zero matrix.
  Gradients backward(ValueId loss);

  /// Adjoint of a node after `backward`; empty if the node was not reached.
  const std::optional<Matrix>& grad(ValueId id) const;

 private:
  ValueId push(TapeNode node);
  void backprop_node(const TapeNode& n, const Matrix& upstream);
  Matrix& accum(ValueId id);

  std::vector<TapeNode> nodes_;
  std::vector<std::optional<Matrix>> grads_;
  std::vector<ValueId> params_;
};

/// Builds a scalar loss on `tape` from already-registered parameter ids.
using LossBuilder = std::function<ValueId(Tape& tape, std::span<const ValueId> params)>;

/// Max over all parameter entries of |analytic - numeric| / max(1, |numeric|)
/// where `numeric` is the central difference with step `epsilon`.
double finite_diff_check(const LossBuilder& build, const std::vector<Matrix>& params,
                         double epsilon);

}  // namespace msga::ad
