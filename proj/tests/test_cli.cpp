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

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "msga/commands.hpp"
#include "msga/fileio.hpp"

using namespace msga;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "msga");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

RunConfig quick(const fs::path& out) {
  RunConfig cfg;
  cfg.out = out;
  cfg.synthetic_count = 40;
  cfg.optim.schedule.total_steps = 20;
  cfg.optim.schedule.warmup = 5;
  cfg.batch_size = 2;
  return cfg;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("zero steps leave the initialization") {
  const fs::path out = scratch("msga_cli_zero");
  RunConfig cfg = quick(out);
  cfg.optim.schedule.total_steps = 0;
  const TrainResult r = cli::cmd_train(cfg);
  CHECK(r.log.empty());
  ModelParams loaded = init_model(cfg.model, 999);
  apply_checkpoint(loaded, read_checkpoint(out / "model.msga"));
  for (std::size_t i = 0; i < loaded.groups.size(); ++i)
    CHECK(loaded.groups[i].value == r.initial.groups[i].value);
  fs::remove_all(out);
}

TEST_CASE("train log satisfies the loss split and is reproducible") {
  const fs::path a = scratch("msga_cli_a"), b = scratch("msga_cli_b");
  const TrainResult ra = cli::cmd_train(quick(a));
  const TrainResult rb = cli::cmd_train(quick(b));
  for (const StepLog& e : ra.log)
    CHECK(std::abs(e.loss.combined - (0.2 * e.loss.ce + 0.8 * e.loss.dice)) < 1e-12);
  CHECK(ra.log.back().loss.combined == rb.log.back().loss.combined);
  CHECK(read_file(a / "train_log.csv") == read_file(b / "train_log.csv"));
  const auto rows = lines(read_file(a / "train_log.csv"));
  CHECK(rows.front() == "step,lr_full,lr_galore,ce,dice,combined");
  CHECK(rows.size() == 21);
  CHECK(fs::exists(a / "train_timing.csv"));
  CHECK(fs::exists(a / "config.txt"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("oracle eval scores perfectly") {
  const fs::path out = scratch("msga_cli_oracle");
  RunConfig cfg = quick(out);
  cfg.oracle = true;
  const EvalResult ev = cli::cmd_eval(cfg);
  for (const ClassMetrics& m : ev.per_class) {
    CHECK(m.dice == 1.0);
    CHECK(m.hd95 == 0.0);
  }
  const auto rows = lines(read_file(out / "metrics.csv"));
  CHECK(rows.front() == "class,dice,hd95");
  CHECK(rows.back().rfind("mean,", 0) == 0);
  CHECK(rows.size() == 4);
  fs::remove_all(out);
}

TEST_CASE("untrained model scores near chance") {
  const fs::path out = scratch("msga_cli_chance");
  RunConfig cfg = quick(out);
  cfg.optim.schedule.total_steps = 0;
  cli::cmd_train(cfg);
  const EvalResult ev = cli::cmd_eval(cfg);
  // Foreground covers a small share of pixels, so an untrained head sits far below a trained one.
  CHECK(ev.mean_dice < 0.5);
  fs::remove_all(out);
}

TEST_CASE("sweep rows match eval of each budget") {
  const fs::path out = scratch("msga_cli_sweep");
  RunConfig cfg = quick(out);
  cfg.budgets = {10};
  const auto rows = cli::cmd_sweep(cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].n_images == 10);
  RunConfig ev = cfg;
  ev.checkpoint = out / "budget_10" / "model.msga";
  ev.out = out / "eval";
  CHECK(cli::cmd_eval(ev).mean_dice == rows[0].mean_dice);
  CHECK(lines(read_file(out / "sweep.csv")).front() == "n_images,mean_dice,mean_hd95");

  cfg.budgets = {10, 1000};
  CHECK_THROWS_AS(cli::cmd_sweep(cfg), ConfigError);
  fs::remove_all(out);
}

TEST_CASE("memreport writes both formats") {
  const fs::path out = scratch("msga_cli_mem");
  const cli::MemReport r = cli::cmd_memreport(quick(out));
  CHECK(r.comparison.reports.size() == 4);
  CHECK(r.comparison.reports[0].encoder.state_bytes < r.comparison.reports[3].encoder.state_bytes);
  CHECK(fs::exists(out / "memory.json"));
  CHECK(fs::exists(out / "memory.txt"));
  fs::remove_all(out);
}

TEST_CASE("ablate keeps frozen groups and subsets") {
  const fs::path out = scratch("msga_cli_ablate");
  const auto rows = cli::cmd_ablate(quick(out));
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.frozen_unchanged);
  std::set<std::string> med, v1;
  for (const GroupMemory& g : rows[0].memory.groups)
    if (g.strategy.rfind("galore", 0) == 0) med.insert(g.name);
  for (const GroupMemory& g : rows[1].memory.groups)
    if (g.strategy.rfind("galore", 0) == 0) v1.insert(g.name);
  CHECK(std::includes(med.begin(), med.end(), v1.begin(), v1.end()));
  CHECK(v1.size() == 8);
  CHECK(lines(read_file(out / "ablation.csv")).size() == 4);
  fs::remove_all(out);
}

TEST_CASE("exit codes") {
  const fs::path out = scratch("msga_cli_exit");
  CHECK(run_cli({"train", "--mode", "v9", "--out", out.string()}) == 2);
  CHECK(run_cli({"train", "--rank", "0", "--out", out.string()}) == 2);
  CHECK(run_cli({"train", "--no-such-flag"}) == 2);
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"eval", "--checkpoint", (out / "missing.msga").string(), "--out", out.string()}) ==
        3);
  CHECK(run_cli({"train", "--manifest", (out / "none.tsv").string(), "--out", out.string()}) == 3);
  CHECK(run_cli({"--config", (out / "none.cfg").string(), "train"}) == 3);

  CHECK(run_cli({"train", "--steps", "3", "--synthetic-count", "20", "--out", out.string()}) == 0);
  CHECK(run_cli({"eval", "--classes", "4", "--synthetic-count", "20", "--out", out.string()}) == 2);
  fs::remove_all(out);
}

TEST_CASE("config file with command-line override") {
  const fs::path out = scratch("msga_cli_config");
  fs::create_directories(out);
  write_file_atomic(out / "run.cfg",
                    "# toy run\nmode=v1\nsteps=4\nsynthetic-count=20\nbudgets=3,5\nlambda=0.5\n");
  CHECK(run_cli({"train", "--config", (out / "run.cfg").string(), "--steps", "2", "--out",
                 (out / "r").string()}) == 0);
  const std::string echo = read_file(out / "r" / "config.txt");
  CHECK(echo.find("mode=v1\n") != std::string::npos);
  CHECK(echo.find("steps=2\n") != std::string::npos);
  CHECK(echo.find("budgets=3,5\n") != std::string::npos);
  CHECK(echo.find("lambda=0.5\n") != std::string::npos);
  CHECK(lines(read_file(out / "r" / "train_log.csv")).size() == 3);

  // The echo is itself a valid config.
  CHECK(run_cli({"train", "--config", (out / "r" / "config.txt").string(), "--out",
                 (out / "r2").string()}) == 0);
  CHECK(read_file(out / "r" / "train_log.csv") == read_file(out / "r2" / "train_log.csv"));
  fs::remove_all(out);
}

}  // TEST_SUITE
