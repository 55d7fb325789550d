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

#include "msga/tape.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace msga::ad {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

void check_labels(OpKind kind, const Matrix& logits, const LabelAttr& attr) {
  if (static_cast<Index>(attr.labels.size()) != logits.rows())
    shape_fail(kind, "logits " + shape_str(logits) + " vs " + std::to_string(attr.labels.size()) +
                         " labels");
  for (int y : attr.labels)
    if (y < 0 || y >= logits.cols())
      shape_fail(kind, "label " + std::to_string(y) + " outside 0.." +
                           std::to_string(logits.cols() - 1));
}

/// One-hot targets as an N x k matrix.
Matrix one_hot(const std::vector<int>& labels, Index classes) {
  Matrix g = Matrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) g(static_cast<Index>(i), labels[i]) = 1.0;
  return g;
}

double dice_value(const Matrix& probs, const Matrix& onehot, double smooth) {
  const Index k = probs.cols();
  double acc = 0.0;
  for (Index c = 0; c < k; ++c) {
    const double inter = probs.col(c).dot(onehot.col(c));
    const double denom = probs.col(c).sum() + onehot.col(c).sum();
    acc += (2.0 * inter + smooth) / (denom + smooth);
  }
  return 1.0 - acc / static_cast<double>(k);
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::Gelu: return "gelu";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::SoftmaxCE: return "softmax_ce";
    case OpKind::SoftDice: return "soft_dice";
    case OpKind::Reshape: return "reshape";
    case OpKind::Patchify: return "patchify";
    case OpKind::Mean: return "mean";
    case OpKind::EmbedLookup: return "embed_lookup";
    case OpKind::Transpose: return "transpose";
    case OpKind::RowSoftmax: return "row_softmax";
  }
  return "unknown";
}

ValueId Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return ValueId{nodes_.size() - 1};
}

ValueId Tape::parameter(Matrix value) {
  TapeNode n;
  n.value = std::move(value);
  n.is_parameter = true;
  const ValueId id = push(std::move(n));
  params_.push_back(id);
  return id;
}

ValueId Tape::constant(Matrix value) {
  TapeNode n;
  n.value = std::move(value);
  return push(std::move(n));
}

const TapeNode& Tape::node(ValueId id) const {
  if (id.index >= nodes_.size()) throw std::out_of_range("tape: unknown value id");
  return nodes_[id.index];
}

double Tape::scalar(ValueId id) const {
  const Matrix& v = value(id);
  if (v.size() != 1) throw ShapeError("tape: value " + shape_str(v) + " is not a scalar");
  return v(0, 0);
}

ValueId Tape::record(OpKind kind, std::vector<ValueId> inputs, OpAttr attr) {
  for (ValueId in : inputs)
    if (in.index >= nodes_.size()) shape_fail(kind, "input refers to a later or unknown node");
  const auto arity = [&](std::size_t want) {
    if (inputs.size() != want)
      shape_fail(kind, "expects " + std::to_string(want) + " inputs, got " +
                           std::to_string(inputs.size()));
  };
  const auto in = [&](std::size_t i) -> const Matrix& { return nodes_[inputs[i].index].value; };

  TapeNode n;
  n.kind = kind;
  switch (kind) {
    case OpKind::Leaf:
      shape_fail(kind, "use parameter() or constant()");
    case OpKind::MatMul: {
      arity(2);
      if (in(0).cols() != in(1).rows())
        shape_fail(kind, "cannot multiply " + shape_str(in(0)) + " by " + shape_str(in(1)));
      n.value = in(0) * in(1);
      break;
    }
    case OpKind::Add: {
      arity(2);
      if (in(0).rows() != in(1).rows() || in(0).cols() != in(1).cols())
        shape_fail(kind, shape_str(in(0)) + " vs " + shape_str(in(1)));
      n.value = in(0) + in(1);
      break;
    }
    case OpKind::AddRow: {
      arity(2);
      if (in(1).rows() != 1 || in(1).cols() != in(0).cols())
        shape_fail(kind, "row " + shape_str(in(1)) + " does not broadcast over " +
                             shape_str(in(0)));
      n.value = in(0).rowwise() + in(1).row(0);
      break;
    }
    case OpKind::Scale: {
      arity(1);
      if (!std::holds_alternative<double>(attr)) shape_fail(kind, "missing factor");
      n.value = std::get<double>(attr) * in(0);
      break;
    }
    case OpKind::Gelu: {
      arity(1);
      n.value = in(0).unaryExpr([](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
      });
      break;
    }
    case OpKind::LayerNorm: {
      arity(3);
      const Matrix& x = in(0);
      const Index d = x.cols();
      if (d < 1) shape_fail(kind, "empty feature dimension");
      if (in(1).rows() != 1 || in(1).cols() != d || in(2).rows() != 1 || in(2).cols() != d)
        shape_fail(kind, "gain " + shape_str(in(1)) + " / bias " + shape_str(in(2)) +
                             " vs input " + shape_str(x));
      Matrix xhat(x.rows(), d);
      Matrix rstd(x.rows(), 1);
      for (Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        rstd(i, 0) = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(i) = (x.row(i).array() - mu) * rstd(i, 0);
      }
      n.value = (xhat.array().rowwise() * in(1).row(0).array()).matrix();
      n.value.rowwise() += in(2).row(0);
      n.saved = {std::move(xhat), std::move(rstd)};
      break;
    }
    case OpKind::SoftmaxCE: {
      arity(1);
      if (!std::holds_alternative<LabelAttr>(attr)) shape_fail(kind, "missing labels");
      const auto& la = std::get<LabelAttr>(attr);
      const Matrix& z = in(0);
      check_labels(kind, z, la);
      Matrix probs = softmax_rows(z);
      double total = 0.0;
      for (Index i = 0; i < z.rows(); ++i) {
        const double peak = z.row(i).maxCoeff();
        const double lse = peak + std::log((z.row(i).array() - peak).exp().sum());
        total += lse - z(i, la.labels[static_cast<std::size_t>(i)]);
      }
      n.value = Matrix::Constant(1, 1, total / static_cast<double>(z.rows()));
      n.saved = {std::move(probs)};
      break;
    }
    case OpKind::SoftDice: {
      arity(1);
      if (!std::holds_alternative<LabelAttr>(attr)) shape_fail(kind, "missing labels");
      const auto& la = std::get<LabelAttr>(attr);
      check_labels(kind, in(0), la);
      if (!(la.smooth > 0.0)) shape_fail(kind, "smooth must be positive");
      Matrix probs = softmax_rows(in(0));
      n.value = Matrix::Constant(1, 1, dice_value(probs, one_hot(la.labels, probs.cols()),
                                                  la.smooth));
      n.saved = {std::move(probs)};
      break;
    }
    case OpKind::Reshape: {
      arity(1);
      if (!std::holds_alternative<ReshapeAttr>(attr)) shape_fail(kind, "missing target shape");
      const auto [r, c] = std::get<ReshapeAttr>(attr);
      if (r * c != in(0).size())
        shape_fail(kind, shape_str(in(0)) + " cannot become " + shape_str(r, c));
      n.value = Eigen::Map<const Matrix>(in(0).data(), r, c);
      break;
    }
    case OpKind::Patchify: {
      arity(1);
      if (!std::holds_alternative<PatchAttr>(attr)) shape_fail(kind, "missing patch size");
      const Index p = std::get<PatchAttr>(attr).patch;
      const Matrix& img = in(0);
      if (p < 1 || img.rows() % p != 0 || img.cols() % p != 0)
        shape_fail(kind, "image " + shape_str(img) + " not divisible by patch " +
                             std::to_string(p));
      const Index gw = img.cols() / p;
      n.value.resize((img.rows() / p) * gw, p * p);
      for (Index bi = 0; bi < img.rows() / p; ++bi)
        for (Index bj = 0; bj < gw; ++bj)
          for (Index ii = 0; ii < p; ++ii)
            for (Index jj = 0; jj < p; ++jj)
              n.value(bi * gw + bj, ii * p + jj) = img(bi * p + ii, bj * p + jj);
      break;
    }
    case OpKind::Mean: {
      arity(1);
      if (in(0).size() == 0) shape_fail(kind, "empty input");
      n.value = Matrix::Constant(1, 1, in(0).mean());
      break;
    }
    case OpKind::EmbedLookup: {
      arity(1);
      if (!std::holds_alternative<IndexAttr>(attr)) shape_fail(kind, "missing indices");
      const auto& rows = std::get<IndexAttr>(attr).rows;
      const Matrix& table = in(0);
      n.value.resize(static_cast<Index>(rows.size()), table.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= table.rows())
          shape_fail(kind, "index " + std::to_string(rows[i]) + " outside table " +
                               shape_str(table));
        n.value.row(static_cast<Index>(i)) = table.row(rows[i]);
      }
      break;
    }
    case OpKind::Transpose: {
      arity(1);
      n.value = in(0).transpose();
      break;
    }
    case OpKind::RowSoftmax: {
      arity(1);
      if (in(0).cols() < 1) shape_fail(kind, "empty rows");
      n.value = softmax_rows(in(0));
      break;
    }
  }
  n.inputs = std::move(inputs);
  n.attr = std::move(attr);
  return push(std::move(n));
}

Matrix& Tape::accum(ValueId id) {
  auto& slot = grads_[id.index];
  if (!slot) {
    const Matrix& v = nodes_[id.index].value;
    slot = Matrix::Zero(v.rows(), v.cols());
  }
  return *slot;
}

void Tape::backprop_node(const TapeNode& n, const Matrix& dy) {
  const auto in = [&](std::size_t i) -> const Matrix& { return nodes_[n.inputs[i].index].value; };
  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul:
      accum(n.inputs[0]).noalias() += dy * in(1).transpose();
      accum(n.inputs[1]).noalias() += in(0).transpose() * dy;
      break;
    case OpKind::Add:
      accum(n.inputs[0]) += dy;
      accum(n.inputs[1]) += dy;
      break;
    case OpKind::AddRow:
      accum(n.inputs[0]) += dy;
      accum(n.inputs[1]) += dy.colwise().sum();
      break;
    case OpKind::Scale:
      accum(n.inputs[0]) += std::get<double>(n.attr) * dy;
      break;
    case OpKind::Gelu: {
      const Matrix dx = in(0).unaryExpr([](double x) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
      accum(n.inputs[0]) += dy.cwiseProduct(dx);
      break;
    }
    case OpKind::LayerNorm: {
      const Matrix& xhat = n.saved[0];
      const Matrix& rstd = n.saved[1];
      const Matrix& gain = in(1);
      accum(n.inputs[2]) += dy.colwise().sum();
      accum(n.inputs[1]) += dy.cwiseProduct(xhat).colwise().sum();
      const Matrix dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
      const double d = static_cast<double>(xhat.cols());
      Matrix& dx = accum(n.inputs[0]);
      for (Index i = 0; i < xhat.rows(); ++i) {
        const double sum_g = dxhat.row(i).sum();
        const double sum_gx = dxhat.row(i).dot(xhat.row(i));
        dx.row(i).array() +=
            (rstd(i, 0) / d) * (d * dxhat.row(i).array() - sum_g - xhat.row(i).array() * sum_gx);
      }
      break;
    }
    case OpKind::SoftmaxCE: {
      const auto& la = std::get<LabelAttr>(n.attr);
      Matrix dz = n.saved[0] - one_hot(la.labels, n.saved[0].cols());
      accum(n.inputs[0]) += (dy(0, 0) / static_cast<double>(dz.rows())) * dz;
      break;
    }
    case OpKind::SoftDice: {
      const auto& la = std::get<LabelAttr>(n.attr);
      const Matrix& probs = n.saved[0];
      const Matrix g = one_hot(la.labels, probs.cols());
      const double k = static_cast<double>(probs.cols());
      Matrix dp(probs.rows(), probs.cols());
      for (Index c = 0; c < probs.cols(); ++c) {
        const double num = 2.0 * probs.col(c).dot(g.col(c)) + la.smooth;
        const double den = probs.col(c).sum() + g.col(c).sum() + la.smooth;
        dp.col(c) = -(dy(0, 0) / k) * ((2.0 * den) * g.col(c).array() - num).matrix() / (den * den);
      }
      Matrix& dz = accum(n.inputs[0]);
      for (Index i = 0; i < probs.rows(); ++i) {
        const double inner = dp.row(i).dot(probs.row(i));
        dz.row(i).array() += probs.row(i).array() * (dp.row(i).array() - inner);
      }
      break;
    }
    case OpKind::Reshape: {
      const Matrix& src = in(0);
      accum(n.inputs[0]) += Eigen::Map<const Matrix>(dy.data(), src.rows(), src.cols());
      break;
    }
    case OpKind::Patchify: {
      const Index p = std::get<PatchAttr>(n.attr).patch;
      Matrix& dimg = accum(n.inputs[0]);
      const Index gw = dimg.cols() / p;
      for (Index bi = 0; bi < dimg.rows() / p; ++bi)
        for (Index bj = 0; bj < gw; ++bj)
          for (Index ii = 0; ii < p; ++ii)
            for (Index jj = 0; jj < p; ++jj)
              dimg(bi * p + ii, bj * p + jj) += dy(bi * gw + bj, ii * p + jj);
      break;
    }
    case OpKind::Mean: {
      Matrix& dx = accum(n.inputs[0]);
      dx.array() += dy(0, 0) / static_cast<double>(dx.size());
      break;
    }
    case OpKind::EmbedLookup: {
      const auto& rows = std::get<IndexAttr>(n.attr).rows;
      Matrix& dtable = accum(n.inputs[0]);
      for (std::size_t i = 0; i < rows.size(); ++i)
        dtable.row(rows[i]) += dy.row(static_cast<Index>(i));
      break;
    }
    case OpKind::Transpose:
      accum(n.inputs[0]) += dy.transpose();
      break;
    case OpKind::RowSoftmax: {
      const Matrix& y = n.value;
      Matrix& dx = accum(n.inputs[0]);
      for (Index i = 0; i < y.rows(); ++i) {
        const double inner = dy.row(i).dot(y.row(i));
        dx.row(i).array() += y.row(i).array() * (dy.row(i).array() - inner);
      }
      break;
    }
  }
}

Gradients Tape::backward(ValueId loss) {
  const TapeNode& root = node(loss);
  if (root.value.size() != 1)
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(root.value));
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[loss.index] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!grads_[i]) continue;
    // Inputs are strictly earlier nodes, so this slot is never written here.
    backprop_node(nodes_[i], *grads_[i]);
  }
  Gradients out;
  for (ValueId p : params_) {
    const auto& g = grads_[p.index];
    const Matrix& v = nodes_[p.index].value;
    out.emplace(p, g ? *g : Matrix::Zero(v.rows(), v.cols()));
  }
  return out;
}

const std::optional<Matrix>& Tape::grad(ValueId id) const {
  static const std::optional<Matrix> none;
  if (id.index >= grads_.size()) return none;
  return grads_[id.index];
}

double finite_diff_check(const LossBuilder& build, const std::vector<Matrix>& params,
                         double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be > 0");

  const auto evaluate = [&](const std::vector<Matrix>& values) {
    Tape tape;
    std::vector<ValueId> ids;
    ids.reserve(values.size());
    for (const Matrix& v : values) ids.push_back(tape.parameter(v));
    return tape.scalar(build(tape, ids));
  };

  Tape tape;
  std::vector<ValueId> ids;
  for (const Matrix& v : params) ids.push_back(tape.parameter(v));
  const Gradients grads = tape.backward(build(tape, ids));

  double worst = 0.0;
  std::vector<Matrix> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Matrix& analytic = grads.at(ids[p]);
    for (Index e = 0; e < params[p].size(); ++e) {
      const double orig = params[p].data()[e];
      probe[p].data()[e] = orig + epsilon;
      const double up = evaluate(probe);
      probe[p].data()[e] = orig - epsilon;
      const double down = evaluate(probe);
      probe[p].data()[e] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err =
          std::abs(analytic.data()[e] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace msga::ad
