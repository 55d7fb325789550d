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

#include "msga/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <iostream>

#include <CLI11.hpp>

#include "msga/error.hpp"
#include "msga/fileio.hpp"

namespace msga::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_train_outputs(const RunConfig& cfg, const TrainResult& res, const fs::path& dir) {
  ensure_dir(dir);
  save_checkpoint(res.params, dir / "model.msga");
  write_file_atomic(dir / "train_log.csv", train_log_csv(res.log));
  // Wall clock lives apart from train_log.csv so identical runs give identical logs.
  std::string timing = "step,seconds\n";
  for (const StepLog& e : res.log) timing += std::to_string(e.step) + "," + fmt(e.seconds) + "\n";
  write_file_atomic(dir / "train_timing.csv", timing);
  write_file_atomic(dir / "config.txt", cfg.echo());
}

const Dataset& select_budget(const Dataset& train, std::size_t n, std::uint64_t seed,
                             Dataset& storage) {
  storage = few_shot_subset(train, n, derive_seed(seed, SeedStream::FewShot));
  return storage;
}

bool frozen_groups_unchanged(const ModelParams& before, const ModelParams& after) {
  for (std::size_t i = 0; i < before.groups.size(); ++i) {
    if (!is_frozen(before.groups[i].strategy)) continue;
    const Matrix& a = before.groups[i].value;
    const Matrix& b = after.groups[i].value;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const auto [train, test] = make_datasets(cfg);
  TrainResult res = train_model(cfg, train);
  write_train_outputs(cfg, res, cfg.out);
  return res;
}

EvalResult cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  const fs::path ckpt = cfg.checkpoint.empty() ? cfg.out / "model.msga" : cfg.checkpoint;
  ModelParams params = init_model(cfg.model, 0);
  if (!cfg.oracle) {
    const auto entries = read_checkpoint(ckpt);
    for (const NamedMatrix& e : entries)
      if (e.name == "decoder/fc2/bias" && e.value.cols() != cfg.model.classes)
        throw ConfigError("classes", "checkpoint predicts " + std::to_string(e.value.cols()) +
                                         " classes, config has " +
                                         std::to_string(cfg.model.classes));
    try {
      apply_checkpoint(params, entries);
    } catch (const std::exception& e) {
      throw ConfigError("checkpoint", std::string("does not match the model config: ") + e.what());
    }
  }
  const auto [train, test] = make_datasets(cfg);
  EvalResult res = evaluate(params, test, cfg.hd95_points, cfg.oracle);
  ensure_dir(cfg.out);
  write_file_atomic(cfg.out / "metrics.csv", metrics_csv(res));
  return res;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.budgets.empty()) throw ConfigError("budgets", "sweep needs at least one budget");
  const auto [train, test] = make_datasets(cfg);
  for (std::size_t b : cfg.budgets)
    if (b > train.size())
      throw ConfigError("budgets", "budget " + std::to_string(b) + " exceeds " +
                                       std::to_string(train.size()) + " training images");
  std::vector<SweepRow> rows;
  for (std::size_t b : cfg.budgets) {
    Dataset subset;
    const Dataset& data = select_budget(train, b, cfg.seed, subset);
    const TrainResult res = train_model(cfg, data);
    const fs::path dir = cfg.out / ("budget_" + std::to_string(b));
    write_train_outputs(cfg, res, dir);
    const EvalResult ev = evaluate(res.params, test, cfg.hd95_points);
    write_file_atomic(dir / "metrics.csv", metrics_csv(ev));
    rows.push_back(SweepRow{b, ev.mean_dice, ev.mean_hd95});
  }
  ensure_dir(cfg.out);
  write_file_atomic(cfg.out / "sweep.csv", sweep_csv(rows));
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "n_images,mean_dice,mean_hd95\n";
  for (const SweepRow& r : rows)
    out += std::to_string(r.n_images) + "," + fmt(r.mean_dice) + "," + fmt(r.mean_hd95) + "\n";
  return out;
}

MemReport cmd_memreport(const RunConfig& cfg) {
  cfg.validate();
  const ModelParams params = init_model(cfg.model, derive_seed(cfg.seed, SeedStream::Init));
  MemReport rep;
  rep.comparison = compare_strategies(
      params, {Mode::MedSaga, Mode::V1, Mode::V2, Mode::FullAdamW}, cfg.galore);
  for (const ParamGroup& g : params.groups) {
    if (component_of(g.role) != Component::Encoder || !g.is_matrix()) continue;
    const Index r = std::min({cfg.galore.rank, g.value.rows(), g.value.cols()});
    const AdapterFootprint f = hypothetical_adapter_footprint(g.value.rows(), g.value.cols(), r);
    rep.adapter.weight_bytes += f.weight_bytes;
    rep.adapter.grad_bytes += f.grad_bytes;
    rep.adapter.state_bytes += f.state_bytes;
  }
  ensure_dir(cfg.out);
  write_file_atomic(cfg.out / "memory.json", report_json(rep.comparison, &rep.adapter));
  write_file_atomic(cfg.out / "memory.txt", report_text(rep.comparison, &rep.adapter));
  return rep;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  const auto [train, test] = make_datasets(cfg);
  Dataset subset;
  const Dataset& data =
      cfg.budgets.empty() ? train : select_budget(train, cfg.budgets.back(), cfg.seed, subset);

  std::vector<AblationRow> rows;
  StrategyComparison cmp;
  for (Mode m : {Mode::MedSaga, Mode::V1, Mode::V2}) {
    RunConfig run = cfg;
    run.mode = m;
    const TrainResult res = train_model(run, data);
    const fs::path dir = cfg.out / std::string(mode_name(m));
    write_train_outputs(run, res, dir);
    AblationRow row;
    row.mode = m;
    row.eval = evaluate(res.params, test, cfg.hd95_points);
    write_file_atomic(dir / "metrics.csv", metrics_csv(row.eval));
    row.memory = build_report(res.initial, std::string(mode_name(m)));
    row.frozen_unchanged = frozen_groups_unchanged(res.initial, res.params);
    cmp.reports.push_back(row.memory);
    rows.push_back(std::move(row));
  }
  ensure_dir(cfg.out);
  write_file_atomic(cfg.out / "ablation.csv", ablation_csv(rows));
  write_file_atomic(cfg.out / "memory.json", report_json(cmp));
  write_file_atomic(cfg.out / "memory.txt", report_text(cmp));
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "mode,mean_dice,mean_hd95,weight_bytes,grad_bytes,optimizer_state_bytes,total_bytes,"
      "frozen_unchanged\n";
  for (const AblationRow& r : rows) {
    const MemoryReport& m = r.memory;
    const auto sum = [&](std::uint64_t MemoryTotals::*field) {
      return m.encoder.*field + m.prompt.*field + m.decoder.*field;
    };
    out += std::string(mode_name(r.mode)) + "," + fmt(r.eval.mean_dice) + "," +
           fmt(r.eval.mean_hd95) + "," + std::to_string(sum(&MemoryTotals::weight_bytes)) + "," +
           std::to_string(sum(&MemoryTotals::grad_bytes)) + "," +
           std::to_string(sum(&MemoryTotals::state_bytes)) + "," +
           std::to_string(m.grand_total_bytes) + "," + (r.frozen_unchanged ? "true" : "false") +
           "\n";
  }
  return out;
}

int run(int argc, const char* const* argv) {
  RunConfig cfg;
  CLI::App app{"Low-rank gradient projection fine-tuning for a toy segmentation model", "msga"};
  app.set_config("--config", "", "key=value file; command-line flags override it");
  app.fallthrough();
  app.require_subcommand(1);

  std::string mode = "medsaga", sided = "one", points = "boundary";
  Index image_size = cfg.model.image_h;
  app.add_option("--mode", mode, "medsaga | v1 | v2 | full-adamw");
  app.add_option("--seed", cfg.seed, "global seed");
  app.add_option("--rank", cfg.galore.rank, "GaLore rank r");
  app.add_option("--refresh-period", cfg.galore.period, "steps between subspace refreshes (T)");
  app.add_option("--sided", sided, "one | two");
  app.add_option("--galore-scale", cfg.galore.scale, "multiplier on the projected update");
  app.add_option("--budgets", cfg.budgets, "ascending few-shot image counts")->delimiter(',');
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--image-size", image_size, "square input side in pixels");
  app.add_option("--patch", cfg.model.patch, "patch size");
  app.add_option("--embed-dim", cfg.model.embed_dim, "token width");
  app.add_option("--blocks", cfg.model.blocks, "encoder blocks");
  app.add_option("--classes", cfg.model.classes, "class count including background");
  app.add_option("--mlp-dim", cfg.model.mlp_dim, "encoder MLP hidden width");
  app.add_option("--decoder-channels", cfg.model.decoder_channels, "mask head hidden width");
  app.add_option("--lr", cfg.optim.schedule.base_lr, "peak lr of full-rank groups");
  app.add_option("--galore-lr", cfg.optim.galore_lr, "peak lr of GaLore groups");
  app.add_option("--warmup", cfg.optim.schedule.warmup, "warmup steps");
  app.add_option("--steps", cfg.optim.schedule.total_steps, "total optimizer steps");
  app.add_option("--decay-exponent", cfg.optim.schedule.exponent, "post-warmup decay power");
  app.add_option("--beta1", cfg.optim.hyper.beta1);
  app.add_option("--beta2", cfg.optim.hyper.beta2);
  app.add_option("--eps", cfg.optim.hyper.eps);
  app.add_option("--weight-decay", cfg.optim.hyper.weight_decay);
  app.add_option("--reset-moments", cfg.optim.reset_moments_on_refresh,
                 "clear projected moments at each refresh");
  app.add_option("--lambda", cfg.loss.lambda, "cross-entropy weight");
  app.add_option("--dice-smooth", cfg.loss.dice_smooth);
  app.add_option("--batch-size", cfg.batch_size);
  app.add_option("--synthetic-count", cfg.synthetic_count, "synthetic images to generate");
  app.add_option("--manifest", cfg.manifest, "TSV manifest instead of synthetic data");
  app.add_option("--test-fraction", cfg.test_fraction, "share of patients held out");
  app.add_option("--hd95-points", points, "boundary | mask");
  app.add_option("--checkpoint", cfg.checkpoint, "model to evaluate (default out/model.msga)");
  app.add_flag("--oracle", cfg.oracle, "evaluate ground truth against itself");

  auto* train = app.add_subcommand("train", "train one model");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the held-out patients");
  auto* sweep = app.add_subcommand("sweep", "train per few-shot budget");
  auto* memreport = app.add_subcommand("memreport", "analytic memory comparison");
  auto* ablate = app.add_subcommand("ablate", "compare medsaga, v1 and v2");

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cfg.mode = parse_mode(mode);
    if (sided == "one") {
      cfg.galore.sided = Sidedness::One;
    } else if (sided == "two") {
      cfg.galore.sided = Sidedness::Two;
    } else {
      throw ConfigError("sided", "expected one or two, got '" + sided + "'");
    }
    if (points == "boundary") {
      cfg.hd95_points = Hd95Points::Boundary;
    } else if (points == "mask") {
      cfg.hd95_points = Hd95Points::FullMask;
    } else {
      throw ConfigError("hd95-points", "expected boundary or mask, got '" + points + "'");
    }
    cfg.model.image_h = cfg.model.image_w = image_size;
    cfg.validate();

    if (train->parsed()) {
      const TrainResult r = cmd_train(cfg);
      std::cout << "trained " << r.log.size() << " steps";
      if (!r.log.empty()) std::cout << ", final loss " << r.log.back().loss.combined;
      std::cout << "\nwrote " << (cfg.out / "model.msga").string() << "\n";
    } else if (eval->parsed()) {
      const EvalResult ev = cmd_eval(cfg);
      std::cout << "# hd95 points: "
                << (ev.points == Hd95Points::Boundary ? "boundary" : "mask") << "\n"
                << metrics_csv(ev);
    } else if (sweep->parsed()) {
      std::cout << sweep_csv(cmd_sweep(cfg));
    } else if (memreport->parsed()) {
      std::cout << report_text(cmd_memreport(cfg).comparison);
    } else if (ablate->parsed()) {
      std::cout << ablation_csv(cmd_ablate(cfg));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::logic_error& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace msga::cli
