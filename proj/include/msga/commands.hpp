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

#include <string>
#include <vector>

#include "msga/memory.hpp"
#include "msga/train.hpp"

/// The five front-end commands. Each writes its outputs under `cfg.out`
/// atomically and returns what it wrote so callers can inspect it.
namespace msga::cli {

TrainResult cmd_train(const RunConfig& cfg);

EvalResult cmd_eval(const RunConfig& cfg);

struct SweepRow {
  std::size_t n_images = 0;
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;
};
/// One model per budget on prefix-nested subsets; checkpoints go to
/// out/budget_<n>/model.msga.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct MemReport {
  StrategyComparison comparison;  // medsaga, v1, v2, full-adamw
  AdapterFootprint adapter;       // summed over encoder matrix groups at the GaLore rank
};
MemReport cmd_memreport(const RunConfig& cfg);

struct AblationRow {
  Mode mode = Mode::MedSaga;
  EvalResult eval;
  MemoryReport memory;
  bool frozen_unchanged = true;  // every Frozen group bitwise equal before/after
};
/// medsaga, v1 and v2 under identical seeds and budgets.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Parses argv and dispatches. Returns 0 on success, 2 for configuration or
/// validation errors, 3 for I/O failures.
int run(int argc, const char* const* argv);

}  // namespace msga::cli
