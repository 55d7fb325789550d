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

#include "msga/memory.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "msga/error.hpp"

namespace msga {

namespace {

std::uint64_t u(Index v) { return static_cast<std::uint64_t>(v); }

double percent_change(std::uint64_t from, std::uint64_t to) {
  if (from == 0) return 0.0;
  return (static_cast<double>(to) - static_cast<double>(from)) / static_cast<double>(from) * 100.0;
}

nlohmann::ordered_json totals_json(const MemoryTotals& t) {
  return {{"weight_bytes", t.weight_bytes},
          {"grad_bytes", t.grad_bytes},
          {"optimizer_state_bytes", t.state_bytes},
          {"total_bytes", t.total()}};
}

}  // namespace

MemoryTotals& MemoryTotals::operator+=(const GroupMemory& g) {
  weight_bytes += g.weight_bytes;
  grad_bytes += g.grad_bytes;
  state_bytes += g.state_bytes;
  return *this;
}

const MemoryTotals& MemoryReport::component(Component c) const {
  switch (c) {
    case Component::Encoder: return encoder;
    case Component::Prompt: return prompt;
    case Component::Decoder: return decoder;
  }
  return encoder;
}

std::uint64_t galore_state_elements(Index rows, Index cols, const GaLore& cfg) {
  const std::uint64_t r = u(cfg.rank);
  if (cfg.sided == Sidedness::Two) return u(rows) * r + u(cols) * r + 2 * r * r;
  const std::uint64_t projected = rows <= cols ? u(rows) : u(cols);
  const std::uint64_t other = rows <= cols ? u(cols) : u(rows);
  return projected * r + 2 * r * other;
}

GroupMemory account_group(const ParamGroup& group) {
  GroupMemory rec;
  rec.name = group.name;
  rec.strategy = strategy_label(group.strategy);
  rec.component = component_of(group.role);
  const std::uint64_t elems = u(group.value.size());
  rec.weight_bytes = elems * kBytesPerElement;
  if (is_frozen(group.strategy)) return rec;
  rec.grad_bytes = elems * kBytesPerElement;
  if (const auto* g = std::get_if<GaLore>(&group.strategy)) {
    rec.state_bytes =
        galore_state_elements(group.value.rows(), group.value.cols(), *g) * kBytesPerElement;
  } else {
    rec.state_bytes = 2 * elems * kBytesPerElement;
  }
  return rec;
}

MemoryReport build_report(const ModelParams& params, std::string mode) {
  MemoryReport rep;
  rep.mode = std::move(mode);
  for (const ParamGroup& g : params.groups) {
    GroupMemory rec = account_group(g);
    switch (rec.component) {
      case Component::Encoder: rep.encoder += rec; break;
      case Component::Prompt: rep.prompt += rec; break;
      case Component::Decoder: rep.decoder += rec; break;
    }
    rep.grand_total_bytes += rec.total();
    rep.groups.push_back(std::move(rec));
  }
  return rep;
}

StrategyComparison compare_strategies(const ModelParams& params, const std::vector<Mode>& modes,
                                      const GaLore& galore) {
  StrategyComparison cmp;
  for (Mode m : modes)
    cmp.reports.push_back(
        build_report(assign_strategies(params, m, galore), std::string(mode_name(m))));
  for (std::size_t i = 0; i < cmp.reports.size(); ++i)
    for (std::size_t j = i + 1; j < cmp.reports.size(); ++j) {
      const MemoryReport& a = cmp.reports[i];
      const MemoryReport& b = cmp.reports[j];
      const auto state = [](const MemoryReport& r) {
        return r.encoder.state_bytes + r.prompt.state_bytes + r.decoder.state_bytes;
      };
      cmp.deltas.push_back(ReportDelta{a.mode, b.mode,
                                       percent_change(a.grand_total_bytes, b.grand_total_bytes),
                                       percent_change(state(a), state(b)),
                                       percent_change(a.encoder.state_bytes,
                                                      b.encoder.state_bytes)});
    }
  return cmp;
}

AdapterFootprint hypothetical_adapter_footprint(Index m, Index n, Index r) {
  if (r < 1) throw std::invalid_argument("adapter footprint: rank must be >= 1");
  if (m < 1 || n < 1) throw std::invalid_argument("adapter footprint: empty weight");
  AdapterFootprint f;
  f.weight_bytes = (u(m) * u(r) + u(r) * u(n)) * kBytesPerElement;
  f.grad_bytes = f.weight_bytes;
  f.state_bytes = 2 * f.weight_bytes;
  return f;
}

double reduction(std::uint64_t before, std::uint64_t after) {
  if (before == 0) return 0.0;
  return 1.0 - static_cast<double>(after) / static_cast<double>(before);
}

std::string report_json(const StrategyComparison& cmp, const AdapterFootprint* adapter) {
  nlohmann::ordered_json doc;
  doc["bytes_per_element"] = kBytesPerElement;
  doc["activations"] = "excluded";
  auto& reports = doc["reports"] = nlohmann::ordered_json::array();
  for (const MemoryReport& r : cmp.reports) {
    nlohmann::ordered_json rep;
    rep["mode"] = r.mode;
    auto& groups = rep["groups"] = nlohmann::ordered_json::array();
    for (const GroupMemory& g : r.groups)
      groups.push_back({{"name", g.name},
                        {"strategy", g.strategy},
                        {"component", component_name(g.component)},
                        {"weight_bytes", g.weight_bytes},
                        {"grad_bytes", g.grad_bytes},
                        {"optimizer_state_bytes", g.state_bytes}});
    rep["totals"] = {{"encoder", totals_json(r.encoder)},
                     {"prompt", totals_json(r.prompt)},
                     {"decoder", totals_json(r.decoder)}};
    rep["grand_total_bytes"] = r.grand_total_bytes;
    reports.push_back(std::move(rep));
  }
  auto& deltas = doc["deltas"] = nlohmann::ordered_json::array();
  for (const ReportDelta& d : cmp.deltas)
    deltas.push_back({{"from", d.from},
                      {"to", d.to},
                      {"total_percent", d.total_percent},
                      {"optimizer_state_percent", d.state_percent},
                      {"encoder_optimizer_state_percent", d.encoder_state_percent}});
  if (adapter)
    doc["adapter_baseline"] = {{"weight_bytes", adapter->weight_bytes},
                               {"grad_bytes", adapter->grad_bytes},
                               {"optimizer_state_bytes", adapter->state_bytes},
                               {"total_bytes", adapter->total()}};
  return doc.dump(2) + "\n";
}

std::string report_text(const StrategyComparison& cmp, const AdapterFootprint* adapter) {
  std::ostringstream os;
  os << "# bytes per element: " << kBytesPerElement << " (64-bit reals); activations excluded\n";
  for (const MemoryReport& r : cmp.reports) {
    os << "\nmode: " << r.mode << "\n";
    std::size_t width = 5;
    for (const GroupMemory& g : r.groups) width = std::max(width, g.name.size());
    os << std::left << std::setw(static_cast<int>(width)) << "group" << "  " << std::setw(16)
       << "strategy" << std::right << std::setw(12) << "weights" << std::setw(12) << "grads"
       << std::setw(12) << "state" << "\n";
    const auto row = [&](const std::string& name, const std::string& strat, std::uint64_t w,
                         std::uint64_t g, std::uint64_t s) {
      os << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::setw(16)
         << strat << std::right << std::setw(12) << w << std::setw(12) << g << std::setw(12) << s
         << "\n";
    };
    for (const GroupMemory& g : r.groups)
      row(g.name, g.strategy, g.weight_bytes, g.grad_bytes, g.state_bytes);
    for (Component c : {Component::Encoder, Component::Prompt, Component::Decoder}) {
      const MemoryTotals& t = r.component(c);
      row(std::string("[") + std::string(component_name(c)) + "]", "", t.weight_bytes,
          t.grad_bytes, t.state_bytes);
    }
    os << "grand total: " << r.grand_total_bytes << " bytes\n";
  }
  if (!cmp.deltas.empty()) {
    os << "\n" << std::left << std::setw(24) << "comparison" << std::right << std::setw(12)
       << "total %" << std::setw(12) << "state %" << std::setw(14) << "enc state %" << "\n";
    os << std::fixed << std::setprecision(2);
    for (const ReportDelta& d : cmp.deltas)
      os << std::left << std::setw(24) << (d.from + " -> " + d.to) << std::right << std::setw(12)
         << d.total_percent << std::setw(12) << d.state_percent << std::setw(14)
         << d.encoder_state_percent << "\n";
  }
  if (adapter)
    os << "\nlow-rank adapter baseline: weights " << adapter->weight_bytes << ", grads "
       << adapter->grad_bytes << ", state " << adapter->state_bytes << ", total "
       << adapter->total() << " bytes\n";
  return os.str();
}

}  // namespace msga
