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
#include <string>
#include <vector>

#include "msga/model.hpp"
#include "msga/optim.hpp"

/// Analytic byte accounting of weights, gradients and optimizer state.
/// Activations and workspace are not modelled. Every element is 8 bytes.
namespace msga {

inline constexpr std::uint64_t kBytesPerElement = 8;

struct GroupMemory {
  std::string name;
  std::string strategy;
  Component component = Component::Encoder;
  std::uint64_t weight_bytes = 0;
  std::uint64_t grad_bytes = 0;
  std::uint64_t state_bytes = 0;

  std::uint64_t total() const { return weight_bytes + grad_bytes + state_bytes; }
};

struct MemoryTotals {
  std::uint64_t weight_bytes = 0;
  std::uint64_t grad_bytes = 0;
  std::uint64_t state_bytes = 0;

  std::uint64_t total() const { return weight_bytes + grad_bytes + state_bytes; }
  MemoryTotals& operator+=(const GroupMemory& g);
  bool operator==(const MemoryTotals&) const = default;
};

struct MemoryReport {
  std::string mode;
  std::vector<GroupMemory> groups;
  MemoryTotals encoder;
  MemoryTotals prompt;
  MemoryTotals decoder;
  std::uint64_t grand_total_bytes = 0;

  const MemoryTotals& component(Component c) const;
};

/// Optimizer-state element count of a GaLore-wrapped rows x cols parameter.
/// One-sided: (projected dim)·r + 2·r·(other dim); the projected dim is rows
/// when rows <= cols. Two-sided: rows·r + cols·r + 2·r².
std::uint64_t galore_state_elements(Index rows, Index cols, const GaLore& cfg);

GroupMemory account_group(const ParamGroup& group);

MemoryReport build_report(const ModelParams& params, std::string mode);

struct ReportDelta {
  std::string from;
  std::string to;
  double total_percent = 0.0;          // (to - from) / from · 100 on grand totals
  double state_percent = 0.0;          // same on all optimizer state
  double encoder_state_percent = 0.0;  // same on encoder optimizer state
};

struct StrategyComparison {
  std::vector<MemoryReport> reports;
  std::vector<ReportDelta> deltas;  // every ordered pair i < j in report order
};

/// One report per mode, in the order given.
StrategyComparison compare_strategies(const ModelParams& params, const std::vector<Mode>& modes,
                                      const GaLore& galore);

/// Low-rank adapter beside a frozen m x n weight: the A (m x r) and B (r x n)
/// factors, their gradients, and two AdamW moments each.
struct AdapterFootprint {
  std::uint64_t weight_bytes = 0;
  std::uint64_t grad_bytes = 0;
  std::uint64_t state_bytes = 0;
  std::uint64_t total() const { return weight_bytes + grad_bytes + state_bytes; }
};

AdapterFootprint hypothetical_adapter_footprint(Index m, Index n, Index r);

/// Fractional reduction 1 - after/before; 0 when before is 0.
double reduction(std::uint64_t before, std::uint64_t after);

std::string report_json(const StrategyComparison& cmp, const AdapterFootprint* adapter = nullptr);
std::string report_text(const StrategyComparison& cmp, const AdapterFootprint* adapter = nullptr);

}  // namespace msga
