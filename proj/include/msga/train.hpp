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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "msga/data.hpp"
#include "msga/losses.hpp"
#include "msga/model.hpp"
#include "msga/optim.hpp"

namespace msga {

/// Everything a run needs. Defaults follow the reference fine-tuning recipe
/// (base lr 0.005 with 250 warmup steps, GaLore lr 1e-3, T = 200, AdamW betas
/// 0.9/0.999, weight decay 0.1, CE weight 0.2) scaled to a CPU-sized model.
struct RunConfig {
  Mode mode = Mode::MedSaga;
  ModelConfig model;
  OptimizerConfig optim;
  GaLore galore;
  LossConfig loss;
  long batch_size = 4;
  std::uint64_t seed = 7;

  std::size_t synthetic_count = 150;
  std::filesystem::path manifest;  // empty: synthetic data
  double test_fraction = 0.33;
  std::vector<std::size_t> budgets;
  Hd95Points hd95_points = Hd95Points::Boundary;

  std::filesystem::path out = "out";
  std::filesystem::path checkpoint;  // eval input; empty means out/model.msga
  bool oracle = false;               // eval ground truth against itself

  RunConfig();
  void validate() const;
  /// key=value lines accepted back by --config.
  std::string echo() const;
};

/// Independent stream seeds derived from the global seed.
enum class SeedStream : std::uint64_t { Data = 1, Split, Init, Shuffle, FewShot };
std::uint64_t derive_seed(std::uint64_t global, SeedStream stream, std::uint64_t index = 0);

std::pair<Dataset, Dataset> make_datasets(const RunConfig& cfg);

struct StepLog {
  long step = 0;
  double lr_full = 0.0;
  double lr_galore = 0.0;
  LossParts loss;
  double seconds = 0.0;  // wall clock since training began
};

struct TrainResult {
  ModelParams initial;
  ModelParams params;
  std::vector<StepLog> log;
  /// Refresh steps of every GaLore group, in group order.
  std::vector<std::vector<long>> refresh_steps;
};

/// Mini-batch training. Per-epoch shuffles come from (seed, epoch); the
/// batch gradient is the mean of per-sample gradients.
TrainResult train_model(const RunConfig& cfg, const Dataset& train);

struct ClassMetrics {
  int cls = 0;
  double dice = 0.0;
  double hd95 = 0.0;
};

struct EvalResult {
  std::vector<ClassMetrics> per_class;  // foreground classes only
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;
  Hd95Points points = Hd95Points::Boundary;
};

/// Scores at token resolution against majority-downsampled labels, averaged
/// over images. With `oracle` the downsampled ground truth is the prediction.
EvalResult evaluate(const ModelParams& params, const Dataset& test, Hd95Points points,
                    bool oracle = false);

std::string metrics_csv(const EvalResult& eval);
std::string train_log_csv(const std::vector<StepLog>& log);

}  // namespace msga
