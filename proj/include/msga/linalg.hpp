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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msga/error.hpp"

namespace msga {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Per-pixel class indices.
using LabelMap = MatrixX<int>;

inline std::string shape_str(Index rows, Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

template <typename Derived>
std::string shape_str(const Eigen::EigenBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* op) {
  if (!m.allFinite()) throw std::domain_error(std::string(op) + ": result has non-finite entries");
}

/// h x w x k array, last index fastest. A (h*w) x k row-major matrix has the
/// same memory layout, which is how the tape and the losses view it.
template <typename Scalar>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Index dim0, Index dim1, Index dim2, Scalar fill = Scalar(0))
      : dim0_(dim0), dim1_(dim1), dim2_(dim2),
        data_(static_cast<std::size_t>(dim0 * dim1 * dim2), fill) {
    if (dim0 < 0 || dim1 < 0 || dim2 < 0) throw ShapeError("Tensor3: negative dimension");
  }

  /// Reinterprets a (dim0*dim1) x dim2 matrix.
  template <typename Derived>
  static Tensor3 from_matrix(const Eigen::MatrixBase<Derived>& m, Index dim0, Index dim1) {
    if (m.rows() != dim0 * dim1)
      throw ShapeError("Tensor3::from_matrix: " + shape_str(m) + " cannot hold " +
                       std::to_string(dim0) + "x" + std::to_string(dim1) + " fibers");
    Tensor3 t(dim0, dim1, m.cols());
    t.as_matrix() = m;
    return t;
  }

  Index dim0() const noexcept { return dim0_; }
  Index dim1() const noexcept { return dim1_; }
  Index dim2() const noexcept { return dim2_; }
  std::size_t size() const noexcept { return data_.size(); }

  Scalar& operator()(Index i, Index j, Index c) { return data_[offset(i, j, c)]; }
  Scalar operator()(Index i, Index j, Index c) const { return data_[offset(i, j, c)]; }

  std::span<Scalar> fiber(Index i, Index j) {
    return {data_.data() + offset(i, j, 0), static_cast<std::size_t>(dim2_)};
  }
  std::span<const Scalar> fiber(Index i, Index j) const {
    return {data_.data() + offset(i, j, 0), static_cast<std::size_t>(dim2_)};
  }

  Eigen::Map<MatrixX<Scalar>> as_matrix() { return {data_.data(), dim0_ * dim1_, dim2_}; }
  Eigen::Map<const MatrixX<Scalar>> as_matrix() const {
    return {data_.data(), dim0_ * dim1_, dim2_};
  }

  const std::vector<Scalar>& data() const noexcept { return data_; }
  std::vector<Scalar>& data() noexcept { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t offset(Index i, Index j, Index c) const {
    return static_cast<std::size_t>((i * dim1_ + j) * dim2_ + c);
  }

  Index dim0_ = 0;
  Index dim1_ = 0;
  Index dim2_ = 0;
  std::vector<Scalar> data_;
};

/// Per-token class scores, grid_h x grid_w x classes.
using MaskLogits = Tensor3<double>;

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: cannot multiply " + shape_str(a) + " by " + shape_str(b));
  MatrixX<typename DerivedA::Scalar> out = a * b;
  require_finite(out, "matmul");
  return out;
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar peak = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - peak).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> softmax_last_dim(const Tensor3<Scalar>& t) {
  if (t.dim2() < 1) throw ShapeError("softmax_last_dim: empty channel dimension");
  Tensor3<Scalar> out(t.dim0(), t.dim1(), t.dim2());
  out.as_matrix() = softmax_rows(t.as_matrix());
  return out;
}

struct SvdOptions {
  /// Stop when the leading subspace moves less than this between sweeps.
  double tolerance = 1e-10;
  int max_sweeps = 500;
  /// Extra block columns carried beyond the requested rank.
  Index oversample = 4;
  bool throw_on_nonconvergence = true;
};

template <typename Scalar>
struct TruncatedSvd {
  MatrixX<Scalar> p;  // m x r, left singular vectors
  VectorX<Scalar> s;  // r, non-increasing
  MatrixX<Scalar> q;  // n x r, right singular vectors
  int sweeps = 0;
  double residual = 0.0;  // last subspace change
  bool converged = false;
};

namespace detail {

/// Orthonormal basis for the range of `y` (thin Householder Q).
template <typename Scalar>
MatrixX<Scalar> thin_q(const MatrixX<Scalar>& y) {
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(y);
  MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(y.rows(), y.cols());
  return q;
}

/// One-sided (Hestenes) Jacobi: rotates the columns of `a` in place until they
/// are mutually orthogonal and accumulates the rotations into `v`.
template <typename Scalar>
void hestenes(MatrixX<Scalar>& a, MatrixX<Scalar>& v) {
  const Index b = a.cols();
  v = MatrixX<Scalar>::Identity(b, b);
  const Scalar tol = std::numeric_limits<Scalar>::epsilon();
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (Index i = 0; i < b - 1; ++i) {
      for (Index j = i + 1; j < b; ++j) {
        const Scalar alpha = a.col(i).squaredNorm();
        const Scalar beta = a.col(j).squaredNorm();
        const Scalar gamma = a.col(i).dot(a.col(j));
        if (alpha == Scalar(0) || beta == Scalar(0)) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar sign = zeta >= Scalar(0) ? Scalar(1) : Scalar(-1);
        const Scalar t = sign / (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (MatrixX<Scalar>* m : {&a, &v}) {
          VectorX<Scalar> ci = m->col(i);
          VectorX<Scalar> cj = m->col(j);
          m->col(i) = c * ci - s * cj;
          m->col(j) = s * ci + c * cj;
        }
      }
    }
    if (!rotated) break;
  }
}

/// Fills columns [from, q.cols()) with unit vectors orthogonal to all earlier
/// columns, drawn from the canonical basis.
template <typename Scalar>
void complete_orthonormal(MatrixX<Scalar>& q, Index from) {
  Index basis = 0;
  for (Index j = from; j < q.cols(); ++j) {
    for (; basis < q.rows(); ++basis) {
      VectorX<Scalar> cand = VectorX<Scalar>::Unit(q.rows(), basis);
      for (int pass = 0; pass < 2; ++pass)
        for (Index k = 0; k < j; ++k) cand -= q.col(k).dot(cand) * q.col(k);
      const Scalar norm = cand.norm();
      if (norm > Scalar(1e-6)) {
        q.col(j) = cand / norm;
        ++basis;
        break;
      }
    }
  }
}

template <typename Scalar>
double subspace_change(const MatrixX<Scalar>& before, const MatrixX<Scalar>& after) {
  return static_cast<double>((after - before * (before.transpose() * after)).norm());
}

}  // namespace detail

/// Leading `rank` singular triplets of `g` by block power iteration on G Gᵀ
/// with per-sweep re-orthonormalization and Rayleigh-Ritz extraction.
/// The largest-magnitude entry of every left singular vector is non-negative.
template <typename Derived>
TruncatedSvd<typename Derived::Scalar> truncated_svd(const Eigen::MatrixBase<Derived>& g_in,
                                                     Index rank, const SvdOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> g = g_in;
  const Index m = g.rows();
  const Index n = g.cols();
  if (rank < 1 || rank > std::min(m, n))
    throw ShapeError("truncated_svd: rank " + std::to_string(rank) + " out of range for " +
                     shape_str(m, n));
  if (!g.allFinite()) throw std::domain_error("truncated_svd: input has non-finite entries");

  const Index block = std::min(m, rank + std::max<Index>(opts.oversample, 0));

  // Fixed-seed start so repeated calls on the same input agree bitwise.
  std::mt19937_64 gen(0x6a09e667f3bcc908ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixX<Scalar> omega(n, block);
  for (Index i = 0; i < omega.size(); ++i) omega.data()[i] = static_cast<Scalar>(normal(gen));
  MatrixX<Scalar> x = detail::thin_q<Scalar>(g * omega);

  TruncatedSvd<Scalar> out;
  MatrixX<Scalar> prev;
  MatrixX<Scalar> w, v;
  for (int sweep = 0;; ++sweep) {
    // Rayleigh-Ritz on the current block.
    w = g.transpose() * x;  // n x block
    detail::hestenes(w, v);
    std::vector<Index> order(static_cast<std::size_t>(block));
    for (Index i = 0; i < block; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return w.col(a).squaredNorm() > w.col(b).squaredNorm();
    });
    MatrixX<Scalar> p(m, rank);
    for (Index j = 0; j < rank; ++j) p.col(j) = x * v.col(order[static_cast<std::size_t>(j)]);

    out.sweeps = sweep;
    if (block == m) {
      // Block spans the whole column space; the Ritz pairs are exact.
      out.converged = true;
      out.residual = 0.0;
    } else if (sweep > 0) {
      out.residual = detail::subspace_change(prev, p);
      out.converged = out.residual < opts.tolerance;
    }
    prev = std::move(p);
    if (out.converged || sweep >= opts.max_sweeps) {
      out.p = prev;
      out.s.resize(rank);
      out.q.resize(n, rank);
      const Scalar top = w.col(order[0]).norm();
      const Scalar cutoff =
          top * std::numeric_limits<Scalar>::epsilon() * static_cast<Scalar>(std::max(m, n));
      Index nonzero = 0;
      for (Index j = 0; j < rank; ++j) {
        const auto col = w.col(order[static_cast<std::size_t>(j)]);
        const Scalar sigma = col.norm();
        if (sigma > cutoff && nonzero == j) {
          out.s(j) = sigma;
          out.q.col(j) = col / sigma;
          ++nonzero;
        } else {
          out.s(j) = Scalar(0);
        }
      }
      detail::complete_orthonormal(out.q, nonzero);
      break;
    }
    x = detail::thin_q<Scalar>(g * (g.transpose() * x));
  }

  for (Index j = 0; j < rank; ++j) {
    Index arg = 0;
    out.p.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.p(arg, j) < Scalar(0)) {
      out.p.col(j) *= Scalar(-1);
      out.q.col(j) *= Scalar(-1);
    }
  }

  if (!out.converged && opts.throw_on_nonconvergence) {
    std::ostringstream os;
    os << "truncated_svd: no convergence after " << out.sweeps << " sweeps, subspace change "
       << out.residual;
    throw ConvergenceError(os.str(), out.residual);
  }
  return out;
}

}  // namespace msga
