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
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msga/linalg.hpp"

namespace msga {

struct Sample {
  Matrix image;    // h x w, values in [0, 1]
  LabelMap mask;   // h x w, values in 0..k-1
  int patient_id = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int classes = 2;
  std::string provenance;

  std::size_t size() const noexcept { return samples.size(); }
  void validate() const;
};

inline constexpr int kSlicesPerPatient = 10;

/// k-1 non-overlapping filled shapes (axis-aligned rectangles or discs), one per
/// foreground class, on a noisy background. Class c has mean intensity
/// 0.1 + 0.8·c/(k-1). Sample i belongs to patient i / 10.
Dataset generate_synthetic(std::uint64_t seed, std::size_t count, Index h, Index w, int k);

/// Binary "P5" graymap, maxval 255 or 65535.
struct PgmImage {
  Index width = 0;
  Index height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major
};

PgmImage parse_pgm(std::string_view bytes);
std::string encode_pgm(const PgmImage& img);

/// Pixel values scaled to [0, 1].
Matrix load_pgm(const std::filesystem::path& path);
/// Values clamped to [0, 1] and rounded to `maxval` levels.
void save_pgm(const Matrix& image, const std::filesystem::path& path, int maxval = 255);

/// Masks store the class index as the raw pixel value.
LabelMap load_mask_pgm(const std::filesystem::path& path);
void save_mask_pgm(const LabelMap& mask, const std::filesystem::path& path);

/// Tab-separated `image<TAB>mask<TAB>patient-id` lines; relative paths are
/// resolved against the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path, int classes);
/// Writes images/masks as PGM under `dir` plus `dir/manifest.tsv`.
std::filesystem::path export_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Splits whole patients: round(fraction · patients) of them (at least one, at
/// most all but one) go to the test side. Sample order is kept on both sides.
std::pair<Dataset, Dataset> split_by_patient(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

/// First n of a seeded permutation, so budgets drawn with one seed nest.
Dataset few_shot_subset(const Dataset& train, std::size_t n, std::uint64_t seed);

}  // namespace msga
