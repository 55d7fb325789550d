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

// Acceptance gate. Each criterion prints one line:
//   [PASS] criterion N <name>: <measurement> (<elapsed> s, limit <limit> s)
// and the process exits non-zero if any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>

#include <CLI11.hpp>

#include "msga/commands.hpp"
#include "msga/fileio.hpp"
#include "oracles.hpp"

using namespace msga;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

Outcome projection_fidelity() {
  std::mt19937_64 gen(101);
  std::uniform_int_distribution<int> dim(1, 16);
  double worst = -1e300;
  int cases = 0;
  for (int t = 0; t < 200; ++t) {
    const Index m = dim(gen), n = dim(gen);
    const Matrix g = oracle::random_matrix(m, n, gen);
    for (Index r = 1; r <= std::min(m, n); ++r) {
      const auto svd = truncated_svd(g, r);
      const Matrix rec = svd.p * (svd.p.transpose() * g * svd.q) * svd.q.transpose();
      const double err = (g - rec).norm();
      const double best = (g - oracle::best_rank_approx(g, r)).norm();
      worst = std::max(worst, err - best);
      ++cases;
    }
  }
  return {worst <= 1e-8, fmt("%d (matrix, rank) cases, max excess over oracle %.3e (<= 1e-8)",
                             cases, worst)};
}

Outcome full_rank_equivalence() {
  std::mt19937_64 gen(102);
  std::uniform_int_distribution<int> dim(1, 12);
  AdamWHyper hp;
  hp.weight_decay = 0.0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index m = dim(gen), n = dim(gen);
    GaLore cfg;
    cfg.rank = std::min(m, n);
    cfg.sided = Sidedness::Two;
    GaLoreState st(cfg, m, n, hp, Regularizer::Identity);
    Matrix w = oracle::random_matrix(m, n, gen);
    const Matrix w0 = w, g = oracle::random_matrix(m, n, gen);
    const double lr = 0.01 + 0.001 * t;
    galore_step(w, g, st, lr);
    worst = std::max(worst, (w - (w0 - lr * g)).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-10, fmt("100 cases, max deviation from plain step %.3e (<= 1e-10)", worst)};
}

Outcome gradient_correctness() {
  using ad::Tape;
  using ad::ValueId;
  std::mt19937_64 gen(103);
  const auto r = [&](Index a, Index b) { return oracle::random_matrix(a, b, gen); };
  const Matrix probe_c = r(9, 3);
  const auto probe = [&](Tape& t, ValueId x) {
    const Matrix& v = t.value(x);
    return t.mean(t.gelu(t.matmul(x, t.constant(probe_c.topRows(v.cols())))));
  };
  struct Case {
    const char* op;
    ad::LossBuilder build;
    std::vector<Matrix> params;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](Tape& t, auto p) { return probe(t, t.matmul(p[0], p[1])); }, {r(3, 3), r(3, 3)}},
      {"add", [&](Tape& t, auto p) { return probe(t, t.add(p[0], p[1])); }, {r(3, 3), r(3, 3)}},
      {"add_row", [&](Tape& t, auto p) { return probe(t, t.add_row(p[0], p[1])); },
       {r(3, 3), r(1, 3)}},
      {"scale", [&](Tape& t, auto p) { return probe(t, t.scale(p[0], 0.7)); }, {r(3, 3)}},
      {"gelu", [&](Tape& t, auto p) { return t.mean(t.gelu(p[0])); }, {r(3, 3)}},
      {"layernorm", [&](Tape& t, auto p) { return probe(t, t.layernorm(p[0], p[1], p[2])); },
       {r(3, 3), r(1, 3), r(1, 3)}},
      {"softmax_ce", [&](Tape& t, auto p) { return t.softmax_ce(p[0], {2, 0, 1}); }, {r(3, 3)}},
      {"soft_dice", [&](Tape& t, auto p) { return t.soft_dice(p[0], {1, 1, 0}, 1e-5); },
       {r(3, 3)}},
      {"reshape", [&](Tape& t, auto p) { return probe(t, t.reshape(p[0], 1, 9)); }, {r(3, 3)}},
      {"patchify", [&](Tape& t, auto p) { return probe(t, t.patchify(p[0], 3)); }, {r(3, 3)}},
      {"mean", [&](Tape& t, auto p) { return t.mean(p[0]); }, {r(3, 3)}},
      {"embed_lookup", [&](Tape& t, auto p) { return probe(t, t.embed_lookup(p[0], {1, 1, 2})); },
       {r(3, 3)}},
      {"transpose", [&](Tape& t, auto p) { return probe(t, t.transpose(p[0])); }, {r(3, 3)}},
      {"row_softmax", [&](Tape& t, auto p) { return probe(t, t.row_softmax(p[0])); }, {r(3, 3)}},
  };
  double worst_op = 0.0;
  std::string worst_name = "none";
  for (const Case& c : cases) {
    const double e = ad::finite_diff_check(c.build, c.params, 1e-5);
    if (e >= worst_op) {
      worst_op = e;
      worst_name = c.op;
    }
  }

  ModelConfig mc;
  mc.image_h = mc.image_w = 8;
  mc.patch = 2;
  mc.embed_dim = 4;
  mc.blocks = 2;
  mc.mlp_dim = 6;
  mc.decoder_channels = 5;
  ModelParams params = init_model(mc, 7);
  for (ParamGroup& g : params.groups) g.value += 0.1 * r(g.value.rows(), g.value.cols());
  const Matrix image = (0.5 + 0.3 * r(8, 8).array()).matrix();
  const LabelMap labels = oracle::random_labels(4, 4, 3, gen);
  std::vector<Matrix> values;
  for (const ParamGroup& g : params.groups) values.push_back(g.value);
  const double model = ad::finite_diff_check(
      [&](Tape& t, std::span<const ValueId> ids) {
        return build_loss(t, build_logits(t, params, ids, image), labels, LossConfig{}).combined;
      },
      values, 1e-5);
  return {worst_op < 1e-6 && model < 1e-4,
          fmt("%zu ops, worst %s %.3e (< 1e-6); model+loss on 8x8 %.3e (< 1e-4)", cases.size(),
              worst_name.c_str(), worst_op, model)};
}

Outcome memory_reduction() {
  const RunConfig cfg;
  const ModelParams base = init_model(cfg.model, 1);
  const StrategyComparison cmp =
      compare_strategies(base, {Mode::MedSaga, Mode::FullAdamW}, cfg.galore);
  const MemoryReport& med = cmp.reports[0];
  const MemoryReport& full = cmp.reports[1];

  // Arithmetic oracle straight from the shapes of the default config.
  const std::uint64_t d = 16, p2 = 16, h = 32, B = 2, r = 4;
  const auto one_sided = [&](std::uint64_t a, std::uint64_t b) {
    const std::uint64_t lo = std::min(a, b), hi = std::max(a, b);
    return lo * r + 2 * r * hi;
  };
  const std::uint64_t vectors = d + B * (4 * d + h + d);  // embed bias, norms, mlp biases
  const std::uint64_t med_elems = one_sided(p2, d) + B * (4 * one_sided(d, d) +
                                                          one_sided(d, h) + one_sided(h, d)) +
                                  2 * vectors;
  const std::uint64_t full_elems = 2 * (p2 * d + B * (4 * d * d + 2 * d * h)) + 2 * vectors;
  const bool bytes_exact = med.encoder.state_bytes == med_elems * 8 &&
                           full.encoder.state_bytes == full_elems * 8;
  const double red = reduction(full.encoder.state_bytes, med.encoder.state_bytes);
  const double oracle_red = 1.0 - static_cast<double>(med_elems) / static_cast<double>(full_elems);
  return {bytes_exact && red == oracle_red && red >= 0.85,
          fmt("encoder state %llu -> %llu bytes, reduction %.2f%% (oracle %.2f%%, needs >= 85%%); "
              "byte counts %s",
              static_cast<unsigned long long>(full.encoder.state_bytes),
              static_cast<unsigned long long>(med.encoder.state_bytes), 100 * red,
              100 * oracle_red, bytes_exact ? "exact" : "MISMATCH")};
}

Outcome refresh_cadence() {
  RunConfig cfg;
  cfg.optim.schedule.total_steps = 1000;
  cfg.galore.period = 200;
  const auto [train, test] = make_datasets(cfg);
  const TrainResult res = train_model(cfg, train);
  const std::vector<long> expect{0, 200, 400, 600, 800};
  bool ok = !res.refresh_steps.empty();
  for (const auto& s : res.refresh_steps) ok &= s == expect;
  std::string seen;
  if (!res.refresh_steps.empty())
    for (long s : res.refresh_steps.front()) seen += (seen.empty() ? "" : ",") + std::to_string(s);
  return {ok, fmt("%zu GaLore groups, refreshes at {%s} in every group: %s",
                  res.refresh_steps.size(), seen.c_str(), ok ? "yes" : "no")};
}

Outcome loss_protocol() {
  RunConfig cfg;
  cfg.optim.schedule.total_steps = 100;
  const auto [train, test] = make_datasets(cfg);
  const TrainResult res = train_model(cfg, train);
  double worst = 0.0;
  for (const StepLog& e : res.log)
    worst = std::max(worst, std::abs(e.loss.combined - (0.2 * e.loss.ce + 0.8 * e.loss.dice)));

  std::mt19937_64 gen(106);
  bool endpoints = true;
  for (int t = 0; t < 50; ++t) {
    MaskLogits m(4, 4, 3);
    m.as_matrix() = oracle::random_matrix(16, 3, gen, 3.0);
    const LabelMap y = oracle::random_labels(4, 4, 3, gen);
    LossConfig lc;
    lc.lambda = 1.0;
    endpoints &= combined_loss(m, y, lc).combined == cross_entropy(m, y);
    lc.lambda = 0.0;
    endpoints &= combined_loss(m, y, lc).combined == dice_loss(m, y, lc.dice_smooth);
    for (double lambda : {0.0, 1.0}) {
      lc.lambda = lambda;
      ad::Tape tape;
      const LossIds ids = build_loss(tape, tape.parameter(Matrix(m.as_matrix())), y, lc);
      endpoints &= tape.scalar(ids.combined) == tape.scalar(lambda == 1.0 ? ids.ce : ids.dice);
    }
  }
  return {worst <= 1e-12 && endpoints,
          fmt("%zu logged steps, max |combined - (0.2 CE + 0.8 Dice)| %.3e (<= 1e-12); "
              "lambda endpoints exact: %s",
              res.log.size(), worst, endpoints ? "yes" : "no")};
}

Outcome metrics_oracle() {
  std::mt19937_64 gen(107);
  std::uniform_int_distribution<int> kdist(2, 4);
  int hd_mismatch = 0, dice_mismatch = 0;
  for (int t = 0; t < 500; ++t) {
    const int k = kdist(gen);
    const LabelMap p = oracle::random_labels(8, 8, k, gen);
    const LabelMap g = oracle::random_labels(8, 8, k, gen);
    for (int c = 1; c < k; ++c) {
      hd_mismatch += hd95(p, g, c) != oracle::hd95(p, g, c, true);
      dice_mismatch += dice_score(p, g, c) != oracle::dice_score(p, g, c);
    }
  }
  return {hd_mismatch == 0 && dice_mismatch == 0,
          fmt("500 random 8x8 pairs: %d HD95 and %d Dice mismatches against brute force",
              hd_mismatch, dice_mismatch)};
}

Outcome argmax_invariance() {
  std::mt19937_64 gen(108);
  std::uniform_int_distribution<int> dim(1, 8), kdist(2, 6);
  int differ = 0;
  for (int t = 0; t < 1000; ++t) {
    MaskLogits m(dim(gen), dim(gen), kdist(gen));
    m.as_matrix() = oracle::random_matrix(m.dim0() * m.dim1(), m.dim2(), gen, 5.0);
    differ += postprocess(m) != argmax_channels(m);
  }
  return {differ == 0, fmt("1000 random logit tensors, %d differ with softmax vs without", differ)};
}

Outcome training_smoke() {
  RunConfig cfg;  // medsaga, k = 3, 150 synthetic images, seed 7, 500 steps
  const auto [train, test] = make_datasets(cfg);
  const TrainResult res = train_model(cfg, train);
  const EvalResult ev = evaluate(res.params, test, cfg.hd95_points);
  return {train.size() == 100 && ev.mean_dice >= 0.90,
          fmt("%zu train / %zu test images, %ld steps, mean foreground Dice %.4f (>= 0.90), "
              "HD95 %.3f",
              train.size(), test.size(), cfg.optim.schedule.total_steps, ev.mean_dice,
              ev.mean_hd95)};
}

Outcome ablation_structure() {
  const RunConfig base;
  const auto [train, test] = make_datasets(base);
  double dice[3] = {0, 0, 0};
  bool frozen_ok = true, v1_ok = true;
  int m = 0;
  for (Mode mode : {Mode::MedSaga, Mode::V1, Mode::V2}) {
    RunConfig cfg = base;
    cfg.mode = mode;
    const TrainResult res = train_model(cfg, train);
    dice[m++] = evaluate(res.params, test, cfg.hd95_points).mean_dice;
    for (std::size_t i = 0; i < res.params.groups.size(); ++i) {
      const ParamGroup& g = res.params.groups[i];
      if (mode == Mode::V2 && component_of(g.role) != Component::Encoder)
        frozen_ok &= is_frozen(g.strategy) && bitwise_equal(g.value, res.initial.groups[i].value);
      if (mode == Mode::V1) v1_ok &= is_galore(g.strategy) == is_attention(g.role);
    }
  }
  return {frozen_ok && v1_ok && dice[0] >= dice[2],
          fmt("v2 prompt+decoder bitwise unchanged: %s; v1 GaLore set == q/k/v/o: %s; "
              "Dice medsaga %.4f, v1 %.4f, v2 %.4f (medsaga >= v2)",
              frozen_ok ? "yes" : "no", v1_ok ? "yes" : "no", dice[0], dice[1], dice[2])};
}

std::string malformed_pgm(int kind, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> small(1, 9);
  const int w = small(gen), h = small(gen);
  const std::string payload(static_cast<std::size_t>(w * h), '\x07');
  const std::string dims = std::to_string(w) + " " + std::to_string(h);
  switch (kind % 10) {
    case 0: return "P2\n" + dims + "\n255\n" + payload;
    case 1: return "P6\n" + dims + "\n255\n" + payload;
    case 2: return "P5\n" + std::to_string(w) + "\n";
    case 3: return "P5\n" + dims + "\n0\n" + payload;
    case 4: return "P5\n" + dims + "\n" + std::to_string(65536 + small(gen)) + "\n" + payload;
    case 5: return "P5\n0 " + std::to_string(h) + "\n255\n";
    case 6: return "P5\n" + dims + "\n255\n" + payload.substr(1);
    case 7: return "P5\n-" + dims + "\n255\n" + payload;
    case 8: return "P5\n" + std::to_string(w) + "x" + std::to_string(h) + "\n255\n" + payload;
    default: return std::string("P5") + dims + "\n255\n" + payload;  // no whitespace after magic
  }
}

Outcome determinism_io() {
  std::mt19937_64 gen(111);
  ModelParams p = init_model(ModelConfig{}, 3);
  for (ParamGroup& g : p.groups) g.value = oracle::random_matrix(g.value.rows(), g.value.cols(), gen);
  const fs::path dir = scratch("msga_accept_io");
  fs::create_directories(dir);
  save_checkpoint(p, dir / "model.msga");
  ModelParams q = init_model(ModelConfig{}, 4);
  apply_checkpoint(q, read_checkpoint(dir / "model.msga"));
  bool round_trip = true;
  for (std::size_t i = 0; i < p.groups.size(); ++i)
    round_trip &= bitwise_equal(p.groups[i].value, q.groups[i].value);

  RunConfig cfg;
  cfg.optim.schedule.total_steps = 100;
  cfg.out = dir / "a";
  cli::cmd_train(cfg);
  cfg.out = dir / "b";
  cli::cmd_train(cfg);
  const bool logs_equal = read_file(dir / "a" / "train_log.csv") == read_file(dir / "b" / "train_log.csv");

  int rejected = 0;
  for (int t = 0; t < 50; ++t) {
    try {
      parse_pgm(malformed_pgm(t, gen));
    } catch (const FormatError&) {
      ++rejected;
    }
  }
  fs::remove_all(dir);
  return {round_trip && logs_equal && rejected == 50,
          fmt("checkpoint bit-exact: %s; identical train_log.csv: %s; malformed PGM rejected %d/50",
              round_trip ? "yes" : "no", logs_equal ? "yes" : "no", rejected)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "projection fidelity", 30, projection_fidelity},
      {2, "full-rank equivalence", 5, full_rank_equivalence},
      {3, "gradient correctness", 120, gradient_correctness},
      {4, "memory reduction", 1, memory_reduction},
      {5, "refresh cadence", 60, refresh_cadence},
      {6, "loss protocol", 60, loss_protocol},
      {7, "metrics oracle", 30, metrics_oracle},
      {8, "argmax invariance", 5, argmax_invariance},
      {9, "training smoke", 300, training_smoke},
      {10, "ablation structure", 600, ablation_structure},
      {11, "determinism and io", 60, determinism_io},
  };

  CLI::App app{"acceptance criteria"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "criterion numbers to run (default: all)")
      ->check(CLI::Range(1, static_cast<int>(all.size())));
  CLI11_PARSE(app, argc, argv);

  bool ok = true;
  for (const Criterion& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end())
      continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = out.pass && secs < c.limit_seconds;
    ok &= pass;
    std::printf("[%s] criterion %d %s: %s (%.2f s, limit %.0f s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name, out.detail.c_str(), secs, c.limit_seconds);
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
