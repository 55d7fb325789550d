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

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "msga/linalg.hpp"
#include "msga/model.hpp"
#include "msga/strategy.hpp"

namespace msga {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

struct AdamWState {
  Matrix m;
  Matrix v;
  long step = 0;

  AdamWState() = default;
  AdamWState(Index rows, Index cols)
      : m(Matrix::Zero(rows, cols)), v(Matrix::Zero(rows, cols)) {}
  void reset() {
    m.setZero();
    v.setZero();
    step = 0;
  }
};

/// Bias-corrected Adam direction m̂ / (sqrt(v̂) + eps); advances the moments.
Matrix adam_direction(const Matrix& g, AdamWState& state, const AdamWHyper& hp);

/// w <- w - lr·m̂/(sqrt(v̂)+eps) - lr·wd·w, decay taken on the pre-update w.
void adamw_step(Matrix& w, const Matrix& g, AdamWState& state, double lr, const AdamWHyper& hp);

/// Update rule run inside the projected space.
enum class Regularizer {
  AdamW,
  Identity,  // passes the projected gradient through unchanged
};

struct GaLoreState {
  GaLore cfg;
  AdamWHyper hyper;
  Regularizer rule = Regularizer::AdamW;
  bool reset_moments_on_refresh = true;

  /// One-sided: which factor carries the projection. Fixed at construction
  /// from the parameter shape: left (m x r) when rows <= cols, otherwise right.
  bool project_left = true;
  std::optional<Matrix> p;  // rows x r
  std::optional<Matrix> q;  // cols x r
  AdamWState inner;
  long step = 0;
  long last_refresh = -1;
  std::vector<long> refresh_steps;

  GaLoreState(const GaLore& cfg, Index rows, Index cols, const AdamWHyper& hyper = {},
              Regularizer rule = Regularizer::AdamW);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  /// Shape of the low-rank space the inner moments live in.
  std::pair<Index, Index> projected_shape() const;

 private:
  Index rows_;
  Index cols_;
};

struct Projectors {
  std::optional<Matrix> p;
  std::optional<Matrix> q;
};

/// Top-r singular subspaces of g: left always when `left` is set, right
/// when `right` is set.
Projectors refresh_subspace(const Matrix& g, Index rank, bool left, bool right);

/// Applies refresh_subspace to `state` per its sidedness and resets inner
/// moments if configured.
void refresh_subspace(GaLoreState& state, const Matrix& g);

/// One GaLore update: refresh when step % T == 0, project g, run the inner
/// rule, project back and take w <- w - lr·scale·G̃ - lr·wd·w.
void galore_step(Matrix& w, const Matrix& g, GaLoreState& state, double lr);

/// Linear warmup then polynomial decay to zero at `total_steps`.
struct WarmupSchedule {
  double base_lr = 0.005;
  long warmup = 250;
  long total_steps = 500;
  double exponent = 0.9;
};

double lr_at(const WarmupSchedule& schedule, long step);

enum class Mode { MedSaga, V1, V2, FullAdamW };

Mode parse_mode(std::string_view text);
std::string_view mode_name(Mode mode);

/// Tags every group with a strategy. Row-vector groups can never be
/// rank-projected and stay on full AdamW in every GaLore mode; the rank is
/// clamped to min(rows, cols) per group.
ModelParams assign_strategies(ModelParams params, Mode mode, const GaLore& galore);

struct OptimizerConfig {
  AdamWHyper hyper;
  WarmupSchedule schedule;  // peak = base lr of full-rank groups
  double galore_lr = 1e-3;  // peak of GaLore groups, same schedule shape
  bool reset_moments_on_refresh = true;
};

/// Per-group optimizer state for a ModelParams with assigned strategies.
class Optimizer {
 public:
  Optimizer(const ModelParams& params, const OptimizerConfig& cfg);

  /// Applies one update. `grads[i]` belongs to `params.groups[i]`; entries for
  /// frozen groups are ignored.
  void step(ModelParams& params, const std::vector<Matrix>& grads);

  long steps_taken() const noexcept { return step_; }
  double full_lr(long step) const;
  double galore_lr(long step) const;

  const GaLoreState* galore_state(std::size_t group) const;
  const AdamWState* adamw_state(std::size_t group) const;

 private:
  OptimizerConfig cfg_;
  std::vector<std::variant<std::monostate, AdamWState, GaLoreState>> states_;
  long step_ = 0;
};

}  // namespace msga
