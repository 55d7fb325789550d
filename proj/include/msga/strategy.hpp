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
#include <variant>

#include "msga/linalg.hpp"

namespace msga {

enum class Sidedness { One, Two };

struct FullAdamW {};

struct GaLore {
  Index rank = 4;
  long period = 200;  // steps between subspace refreshes
  double scale = 1.0;
  Sidedness sided = Sidedness::One;
};

struct Frozen {};

/// How one parameter group is fine-tuned.
using Strategy = std::variant<FullAdamW, GaLore, Frozen>;

inline bool is_galore(const Strategy& s) { return std::holds_alternative<GaLore>(s); }
inline bool is_frozen(const Strategy& s) { return std::holds_alternative<Frozen>(s); }

inline std::string strategy_label(const Strategy& s) {
  if (std::holds_alternative<FullAdamW>(s)) return "full-adamw";
  if (std::holds_alternative<Frozen>(s)) return "frozen";
  const auto& g = std::get<GaLore>(s);
  return std::string("galore-") + (g.sided == Sidedness::One ? "one" : "two") + "-r" +
         std::to_string(g.rank);
}

}  // namespace msga
