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

#include "msga/train.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "msga/error.hpp"

namespace msga {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig::RunConfig() {
  optim.schedule.base_lr = 0.005;
  optim.schedule.warmup = 250;
  optim.schedule.total_steps = 500;
  optim.galore_lr = 1e-3;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  const auto& s = optim.schedule;
  if (!(s.base_lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (!(optim.galore_lr > 0.0)) throw ConfigError("galore-lr", "must be positive");
  if (s.warmup < 0) throw ConfigError("warmup", "must be >= 0");
  if (s.total_steps < 0) throw ConfigError("steps", "must be >= 0");
  if (!(optim.hyper.beta1 >= 0.0 && optim.hyper.beta1 < 1.0))
    throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(optim.hyper.beta2 >= 0.0 && optim.hyper.beta2 < 1.0))
    throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(optim.hyper.eps > 0.0)) throw ConfigError("eps", "must be positive");
  if (optim.hyper.weight_decay < 0.0) throw ConfigError("weight-decay", "must be >= 0");
  if (galore.rank < 1) throw ConfigError("rank", "must be >= 1");
  if (galore.rank > model.embed_dim)
    throw ConfigError("rank", "exceeds embed-dim " + std::to_string(model.embed_dim));
  if (galore.period < 1) throw ConfigError("refresh-period", "must be >= 1");
  if (!(galore.scale > 0.0)) throw ConfigError("galore-scale", "must be positive");
  if (batch_size < 1) throw ConfigError("batch-size", "must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test-fraction", "must lie strictly between 0 and 1");
  if (manifest.empty() && synthetic_count < 2 * kSlicesPerPatient)
    throw ConfigError("synthetic-count", "need at least two patients (20 images)");
  for (std::size_t i = 1; i < budgets.size(); ++i)
    if (budgets[i] <= budgets[i - 1]) throw ConfigError("budgets", "must be strictly ascending");
  for (std::size_t b : budgets)
    if (b == 0) throw ConfigError("budgets", "must be positive");
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "# resolved run configuration\n"
     << "mode=" << mode_name(mode) << "\n"
     << "seed=" << seed << "\n"
     << "image-size=" << model.image_h << "\n"
     << "patch=" << model.patch << "\n"
     << "embed-dim=" << model.embed_dim << "\n"
     << "blocks=" << model.blocks << "\n"
     << "classes=" << model.classes << "\n"
     << "mlp-dim=" << model.mlp_dim << "\n"
     << "decoder-channels=" << model.decoder_channels << "\n"
     << "lr=" << fmt(optim.schedule.base_lr) << "\n"
     << "galore-lr=" << fmt(optim.galore_lr) << "\n"
     << "warmup=" << optim.schedule.warmup << "\n"
     << "steps=" << optim.schedule.total_steps << "\n"
     << "decay-exponent=" << fmt(optim.schedule.exponent) << "\n"
     << "beta1=" << fmt(optim.hyper.beta1) << "\n"
     << "beta2=" << fmt(optim.hyper.beta2) << "\n"
     << "eps=" << fmt(optim.hyper.eps) << "\n"
     << "weight-decay=" << fmt(optim.hyper.weight_decay) << "\n"
     << "reset-moments=" << (optim.reset_moments_on_refresh ? "true" : "false") << "\n"
     << "rank=" << galore.rank << "\n"
     << "refresh-period=" << galore.period << "\n"
     << "galore-scale=" << fmt(galore.scale) << "\n"
     << "sided=" << (galore.sided == Sidedness::One ? "one" : "two") << "\n"
     << "lambda=" << fmt(loss.lambda) << "\n"
     << "dice-smooth=" << fmt(loss.dice_smooth) << "\n"
     << "batch-size=" << batch_size << "\n"
     << "synthetic-count=" << synthetic_count << "\n";
  if (!manifest.empty()) os << "manifest=" << manifest.string() << "\n";
  os << "test-fraction=" << fmt(test_fraction) << "\n";
  if (!budgets.empty()) {
    os << "budgets=";
    for (std::size_t i = 0; i < budgets.size(); ++i) os << (i ? "," : "") << budgets[i];
    os << "\n";
  }
  os << "hd95-points=" << (hd95_points == Hd95Points::Boundary ? "boundary" : "mask") << "\n";
  return os.str();
}

std::uint64_t derive_seed(std::uint64_t global, SeedStream stream, std::uint64_t index) {
  return splitmix64(splitmix64(global ^ (static_cast<std::uint64_t>(stream) << 56)) + index);
}

std::pair<Dataset, Dataset> make_datasets(const RunConfig& cfg) {
  Dataset all = cfg.manifest.empty()
                    ? generate_synthetic(derive_seed(cfg.seed, SeedStream::Data),
                                         cfg.synthetic_count, cfg.model.image_h,
                                         cfg.model.image_w, static_cast<int>(cfg.model.classes))
                    : load_manifest(cfg.manifest, static_cast<int>(cfg.model.classes));
  for (const Sample& s : all.samples)
    if (s.image.rows() != cfg.model.image_h || s.image.cols() != cfg.model.image_w)
      throw ConfigError("image-size", "dataset image " + shape_str(s.image) +
                                          " does not match the model input");
  return split_by_patient(all, cfg.test_fraction, derive_seed(cfg.seed, SeedStream::Split));
}

TrainResult train_model(const RunConfig& cfg, const Dataset& train) {
  cfg.validate();
  if (train.size() == 0) throw ConfigError("data", "training set is empty");
  if (train.classes != cfg.model.classes)
    throw ConfigError("classes", "dataset has " + std::to_string(train.classes) +
                                     " classes, model " + std::to_string(cfg.model.classes));

  TrainResult res;
  res.initial = assign_strategies(init_model(cfg.model, derive_seed(cfg.seed, SeedStream::Init)),
                                  cfg.mode, cfg.galore);
  res.params = res.initial;
  ModelParams& params = res.params;
  Optimizer opt(params, cfg.optim);

  std::vector<LabelMap> targets;
  targets.reserve(train.size());
  for (const Sample& s : train.samples)
    targets.push_back(downsample_labels(s.mask, cfg.model.patch));

  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  const auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 gen(derive_seed(cfg.seed, SeedStream::Shuffle, epoch++));
      std::shuffle(order.begin(), order.end(), gen);
      cursor = 0;
    }
    return order[cursor++];
  };

  const auto start = std::chrono::steady_clock::now();
  const long steps = cfg.optim.schedule.total_steps;
  res.log.reserve(static_cast<std::size_t>(steps));
  std::vector<Matrix> grads(params.groups.size());
  for (long step = 0; step < steps; ++step) {
    for (std::size_t i = 0; i < grads.size(); ++i)
      grads[i] = Matrix::Zero(params.groups[i].value.rows(), params.groups[i].value.cols());
    LossParts batch;
    for (long b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = next_index();
      ad::Tape tape;
      const auto ids = bind_parameters(tape, params);
      const ad::ValueId logits = build_logits(tape, params, ids, train.samples[idx].image);
      const LossIds loss = build_loss(tape, logits, targets[idx], cfg.loss);
      batch.ce += tape.scalar(loss.ce);
      batch.dice += tape.scalar(loss.dice);
      batch.combined += tape.scalar(loss.combined);
      const ad::Gradients g = tape.backward(loss.combined);
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (auto it = g.find(ids[i]); it != g.end()) grads[i] += it->second;
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch_size);
    for (Matrix& g : grads) g *= inv;
    batch.ce *= inv;
    batch.dice *= inv;
    batch.combined *= inv;

    StepLog entry;
    entry.step = step;
    entry.lr_full = opt.full_lr(step);
    entry.lr_galore = opt.galore_lr(step);
    entry.loss = batch;
    opt.step(params, grads);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.log.push_back(entry);
  }

  for (std::size_t i = 0; i < params.groups.size(); ++i)
    if (const GaLoreState* st = opt.galore_state(i)) res.refresh_steps.push_back(st->refresh_steps);
  return res;
}

EvalResult evaluate(const ModelParams& params, const Dataset& test, Hd95Points points,
                    bool oracle) {
  if (test.size() == 0) throw ConfigError("data", "evaluation set is empty");
  const ModelConfig& mc = params.config;
  if (test.classes != mc.classes)
    throw ConfigError("classes", "dataset has " + std::to_string(test.classes) +
                                     " classes, model " + std::to_string(mc.classes));
  const int k = static_cast<int>(mc.classes);
  EvalResult res;
  res.points = points;
  for (int c = 1; c < k; ++c) res.per_class.push_back(ClassMetrics{c, 0.0, 0.0});
  for (const Sample& s : test.samples) {
    const LabelMap gt = downsample_labels(s.mask, mc.patch);
    const LabelMap pred = oracle ? gt : postprocess(forward(params, s.image));
    for (ClassMetrics& m : res.per_class) {
      m.dice += dice_score(pred, gt, m.cls);
      m.hd95 += hd95(pred, gt, m.cls, points);
    }
  }
  const double n = static_cast<double>(test.size());
  for (ClassMetrics& m : res.per_class) {
    m.dice /= n;
    m.hd95 /= n;
    res.mean_dice += m.dice;
    res.mean_hd95 += m.hd95;
  }
  res.mean_dice /= static_cast<double>(res.per_class.size());
  res.mean_hd95 /= static_cast<double>(res.per_class.size());
  return res;
}

std::string metrics_csv(const EvalResult& eval) {
  std::string out = "class,dice,hd95\n";
  for (const ClassMetrics& m : eval.per_class)
    out += std::to_string(m.cls) + "," + fmt(m.dice) + "," + fmt(m.hd95) + "\n";
  out += "mean," + fmt(eval.mean_dice) + "," + fmt(eval.mean_hd95) + "\n";
  return out;
}

std::string train_log_csv(const std::vector<StepLog>& log) {
  std::string out = "step,lr_full,lr_galore,ce,dice,combined\n";
  for (const StepLog& e : log)
    out += std::to_string(e.step) + "," + fmt(e.lr_full) + "," + fmt(e.lr_galore) + "," +
           fmt(e.loss.ce) + "," + fmt(e.loss.dice) + "," + fmt(e.loss.combined) + "\n";
  return out;
}

}  // namespace msga
