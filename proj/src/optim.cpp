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

#include "msga/optim.hpp"

#include <cmath>
#include <string>

#include "msga/error.hpp"

namespace msga {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Matrix adam_direction(const Matrix& g, AdamWState& state, const AdamWHyper& hp) {
  require_same_shape(g, state.m, "adamw_step");
  ++state.step;
  state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * g;
  state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  return ((state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hp.eps)).matrix();
}

void adamw_step(Matrix& w, const Matrix& g, AdamWState& state, double lr, const AdamWHyper& hp) {
  require_same_shape(w, g, "adamw_step");
  if (lr < 0.0) throw std::invalid_argument("adamw_step: negative learning rate");
  const Matrix dir = adam_direction(g, state, hp);
  w -= lr * dir + (lr * hp.weight_decay) * w;
}

GaLoreState::GaLoreState(const GaLore& cfg_in, Index rows, Index cols, const AdamWHyper& hp,
                         Regularizer r)
    : cfg(cfg_in), hyper(hp), rule(r), project_left(rows <= cols), rows_(rows), cols_(cols) {
  if (cfg.rank < 1 || cfg.rank > std::min(rows, cols))
    throw ShapeError("galore: rank " + std::to_string(cfg.rank) + " exceeds parameter " +
                     shape_str(rows, cols));
  if (cfg.period < 1) throw std::invalid_argument("galore: refresh period must be >= 1");
  const auto [pr, pc] = projected_shape();
  inner = AdamWState(pr, pc);
}

std::pair<Index, Index> GaLoreState::projected_shape() const {
  if (cfg.sided == Sidedness::Two) return {cfg.rank, cfg.rank};
  return project_left ? std::pair{cfg.rank, cols_} : std::pair{rows_, cfg.rank};
}

Projectors refresh_subspace(const Matrix& g, Index rank, bool left, bool right) {
  if (rank > std::min(g.rows(), g.cols()))
    throw ShapeError("refresh_subspace: rank " + std::to_string(rank) + " exceeds " +
                     shape_str(g));
  const auto svd = truncated_svd(g, rank);
  Projectors out;
  if (left) out.p = svd.p;
  if (right) out.q = svd.q;
  return out;
}

void refresh_subspace(GaLoreState& state, const Matrix& g) {
  const bool two = state.cfg.sided == Sidedness::Two;
  Projectors pr = refresh_subspace(g, state.cfg.rank, two || state.project_left,
                                   two || !state.project_left);
  state.p = std::move(pr.p);
  state.q = std::move(pr.q);
  if (state.reset_moments_on_refresh) state.inner.reset();
  state.last_refresh = state.step;
  state.refresh_steps.push_back(state.step);
}

void galore_step(Matrix& w, const Matrix& g, GaLoreState& state, double lr) {
  require_same_shape(w, g, "galore_step");
  if (w.rows() != state.rows() || w.cols() != state.cols())
    throw ShapeError("galore_step: state built for " + shape_str(state.rows(), state.cols()) +
                     ", got " + shape_str(w));
  if (state.step % state.cfg.period == 0) refresh_subspace(state, g);

  const bool two = state.cfg.sided == Sidedness::Two;
  const bool use_p = two || state.project_left;
  const bool use_q = two || !state.project_left;
  if ((use_p && !state.p) || (use_q && !state.q))
    throw std::logic_error("galore_step: projection missing");

  Matrix low = g;
  if (use_p) low = state.p->transpose() * low;
  if (use_q) low = low * *state.q;

  Matrix dir = state.rule == Regularizer::AdamW ? adam_direction(low, state.inner, state.hyper)
                                                : low;
  if (use_p) dir = *state.p * dir;
  if (use_q) dir = dir * state.q->transpose();

  w -= (lr * state.cfg.scale) * dir + (lr * state.hyper.weight_decay) * w;
  ++state.step;
}

double lr_at(const WarmupSchedule& s, long step) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step < s.warmup)
    return s.base_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup);
  if (step >= s.total_steps) return 0.0;
  const double frac =
      static_cast<double>(step - s.warmup) / static_cast<double>(s.total_steps - s.warmup);
  return s.base_lr * std::pow(1.0 - frac, s.exponent);
}

Mode parse_mode(std::string_view text) {
  if (text == "medsaga") return Mode::MedSaga;
  if (text == "v1") return Mode::V1;
  if (text == "v2") return Mode::V2;
  if (text == "full-adamw") return Mode::FullAdamW;
  throw ConfigError("mode", "unknown mode '" + std::string(text) +
                                "' (expected medsaga, v1, v2 or full-adamw)");
}

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::MedSaga: return "medsaga";
    case Mode::V1: return "v1";
    case Mode::V2: return "v2";
    case Mode::FullAdamW: return "full-adamw";
  }
  return "unknown";
}

ModelParams assign_strategies(ModelParams params, Mode mode, const GaLore& galore) {
  for (ParamGroup& g : params.groups) {
    const Component comp = component_of(g.role);
    const bool encoder = comp == Component::Encoder;
    bool projected = false;
    switch (mode) {
      case Mode::MedSaga:
      case Mode::V2: projected = encoder && g.is_matrix(); break;
      case Mode::V1: projected = encoder && is_attention(g.role) && g.is_matrix(); break;
      case Mode::FullAdamW: projected = false; break;
    }
    if (projected) {
      GaLore cfg = galore;
      cfg.rank = std::min({cfg.rank, g.value.rows(), g.value.cols()});
      g.strategy = cfg;
    } else if (mode == Mode::V2 && !encoder) {
      g.strategy = Frozen{};
    } else {
      g.strategy = FullAdamW{};
    }
  }
  return params;
}

Optimizer::Optimizer(const ModelParams& params, const OptimizerConfig& cfg) : cfg_(cfg) {
  states_.reserve(params.groups.size());
  for (const ParamGroup& g : params.groups) {
    if (const auto* gl = std::get_if<GaLore>(&g.strategy)) {
      GaLoreState st(*gl, g.value.rows(), g.value.cols(), cfg.hyper);
      st.reset_moments_on_refresh = cfg.reset_moments_on_refresh;
      states_.emplace_back(std::move(st));
    } else if (is_frozen(g.strategy)) {
      states_.emplace_back(std::monostate{});
    } else {
      states_.emplace_back(AdamWState(g.value.rows(), g.value.cols()));
    }
  }
}

double Optimizer::full_lr(long step) const { return lr_at(cfg_.schedule, step); }

double Optimizer::galore_lr(long step) const {
  return cfg_.galore_lr * lr_at(cfg_.schedule, step) / cfg_.schedule.base_lr;
}

void Optimizer::step(ModelParams& params, const std::vector<Matrix>& grads) {
  if (grads.size() != params.groups.size() || states_.size() != params.groups.size())
    throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.groups.size()) + " groups");
  const double lr_full = full_lr(step_);
  const double lr_low = galore_lr(step_);
  for (std::size_t i = 0; i < params.groups.size(); ++i) {
    Matrix& w = params.groups[i].value;
    if (auto* a = std::get_if<AdamWState>(&states_[i])) {
      adamw_step(w, grads[i], *a, lr_full, cfg_.hyper);
    } else if (auto* gs = std::get_if<GaLoreState>(&states_[i])) {
      galore_step(w, grads[i], *gs, lr_low);
    }
  }
  ++step_;
}

const GaLoreState* Optimizer::galore_state(std::size_t group) const {
  return group < states_.size() ? std::get_if<GaLoreState>(&states_[group]) : nullptr;
}

const AdamWState* Optimizer::adamw_state(std::size_t group) const {
  return group < states_.size() ? std::get_if<AdamWState>(&states_[group]) : nullptr;
}

}  // namespace msga
