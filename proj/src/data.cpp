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

#include "msga/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "msga/error.hpp"
#include "msga/fileio.hpp"

namespace msga {

namespace {

constexpr double kBackground = 0.1;
constexpr double kNoise = 0.03;
constexpr int kPlacementTries = 64;
constexpr Index kMaxPgmSide = 1 << 15;

struct Shape {
  bool disc = false;
  double ci = 0, cj = 0, radius = 0;  // disc
  Index top = 0, left = 0, height = 0, width = 0;  // rectangle

  bool covers(Index i, Index j) const {
    if (disc) {
      const double di = static_cast<double>(i) + 0.5 - ci;
      const double dj = static_cast<double>(j) + 0.5 - cj;
      return di * di + dj * dj <= radius * radius;
    }
    return i >= top && i < top + height && j >= left && j < left + width;
  }
};

Shape draw_shape(std::mt19937_64& gen, Index h, Index w) {
  const Index side = std::min(h, w);
  Shape s;
  s.disc = std::bernoulli_distribution(0.5)(gen);
  if (s.disc) {
    s.radius = std::uniform_real_distribution<double>(static_cast<double>(side) / 8.0,
                                                      static_cast<double>(side) / 4.0)(gen);
    s.ci = std::uniform_real_distribution<double>(s.radius, static_cast<double>(h) - s.radius)(gen);
    s.cj = std::uniform_real_distribution<double>(s.radius, static_cast<double>(w) - s.radius)(gen);
  } else {
    std::uniform_int_distribution<Index> extent(side / 4, side / 2);
    s.height = extent(gen);
    s.width = extent(gen);
    s.top = std::uniform_int_distribution<Index>(0, h - s.height)(gen);
    s.left = std::uniform_int_distribution<Index>(0, w - s.width)(gen);
  }
  return s;
}

/// Places one shape per foreground class without overlap; false if a class
/// could not be placed within the retry budget.
bool place_shapes(std::mt19937_64& gen, Index h, Index w, int k, LabelMap& mask) {
  mask.setZero(h, w);
  for (int c = 1; c < k; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
      const Shape s = draw_shape(gen, h, w);
      bool clash = false;
      Index area = 0;
      for (Index i = 0; i < h && !clash; ++i)
        for (Index j = 0; j < w; ++j)
          if (s.covers(i, j)) {
            ++area;
            if (mask(i, j) != 0) {
              clash = true;
              break;
            }
          }
      if (clash || area == 0) continue;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
          if (s.covers(i, j)) mask(i, j) = c;
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

void skip_space_and_comments(std::string_view b, std::size_t& pos) {
  while (pos < b.size()) {
    const char ch = b[pos];
    if (ch == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' || ch == '\f') {
      ++pos;
    } else {
      return;
    }
  }
}

Index read_header_int(std::string_view b, std::size_t& pos, const char* what) {
  skip_space_and_comments(b, pos);
  const std::size_t start = pos;
  Index value = 0;
  while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
    value = value * 10 + (b[pos] - '0');
    if (value > 1'000'000) throw FormatError(std::string("PGM ") + what + " too large", start);
    ++pos;
  }
  if (pos == start) throw FormatError(std::string("PGM ") + what + " missing", start);
  return value;
}

}  // namespace

void Dataset::validate() const {
  if (classes < 2) throw ConfigError("classes", "need at least 2");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.image.rows() != s.mask.rows() || s.image.cols() != s.mask.cols())
      throw ShapeError("sample " + std::to_string(i) + ": image " + shape_str(s.image) +
                       " vs mask " + shape_str(s.mask));
    if (s.mask.size() > 0 && (s.mask.minCoeff() < 0 || s.mask.maxCoeff() >= classes))
      throw ConfigError("classes", "sample " + std::to_string(i) + " has labels outside 0.." +
                                       std::to_string(classes - 1));
  }
}

Dataset generate_synthetic(std::uint64_t seed, std::size_t count, Index h, Index w, int k) {
  if (k < 2) throw ConfigError("classes", "need at least 2");
  if (h < 16 || w < 16) throw ConfigError("image-size", "synthetic images need h, w >= 16");

  Dataset ds;
  ds.classes = k;
  ds.provenance = "synthetic seed=" + std::to_string(seed);
  ds.samples.reserve(count);
  for (std::size_t idx = 0; idx < count; ++idx) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(idx), 0x5a17u};
    std::mt19937_64 gen(seq);
    Sample s;
    s.patient_id = static_cast<int>(idx / kSlicesPerPatient);
    while (!place_shapes(gen, h, w, k, s.mask)) {
    }
    std::normal_distribution<double> noise(0.0, kNoise);
    s.image.resize(h, w);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const double level =
            kBackground + 0.8 * static_cast<double>(s.mask(i, j)) / static_cast<double>(k - 1);
        s.image(i, j) = std::clamp(level + noise(gen), 0.0, 1.0);
      }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

PgmImage parse_pgm(std::string_view b) {
  if (b.size() < 2 || b[0] != 'P') throw FormatError("not a PGM file", 0);
  if (b[1] != '5')
    throw FormatError(std::string("unsupported PGM variant P") + (b.size() > 1 ? b[1] : '?') +
                          " (only binary P5)",
                      1);
  std::size_t pos = 2;
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos])))
    throw FormatError("PGM magic not followed by whitespace", pos);
  PgmImage img;
  img.width = read_header_int(b, pos, "width");
  img.height = read_header_int(b, pos, "height");
  const Index maxval = read_header_int(b, pos, "maxval");
  if (img.width < 1 || img.height < 1 || img.width > kMaxPgmSide || img.height > kMaxPgmSide)
    throw FormatError("PGM dimensions " + shape_str(img.height, img.width) + " unsupported", pos);
  if (maxval != 255 && maxval != 65535)
    throw FormatError("PGM maxval " + std::to_string(maxval) + " unsupported", pos);
  img.maxval = static_cast<int>(maxval);
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos])))
    throw FormatError("PGM header not terminated by whitespace", pos);
  ++pos;

  const std::size_t n = static_cast<std::size_t>(img.width * img.height);
  const std::size_t bpp = img.maxval == 255 ? 1 : 2;
  if (b.size() - pos < n * bpp)
    throw FormatError("PGM payload truncated: need " + std::to_string(n * bpp) + " bytes, have " +
                          std::to_string(b.size() - pos),
                      b.size());
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (bpp == 1) {
      img.pixels[i] = static_cast<unsigned char>(b[pos + i]);
    } else {
      img.pixels[i] = static_cast<std::uint16_t>(
          (static_cast<unsigned char>(b[pos + 2 * i]) << 8) |
          static_cast<unsigned char>(b[pos + 2 * i + 1]));
    }
  }
  return img;
}

std::string encode_pgm(const PgmImage& img) {
  if (img.maxval != 255 && img.maxval != 65535)
    throw std::invalid_argument("encode_pgm: maxval must be 255 or 65535");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                    std::to_string(img.maxval) + "\n";
  for (std::uint16_t v : img.pixels) {
    if (img.maxval == 255) {
      out.push_back(static_cast<char>(v & 0xffu));
    } else {
      out.push_back(static_cast<char>(v >> 8));
      out.push_back(static_cast<char>(v & 0xffu));
    }
  }
  return out;
}

Matrix load_pgm(const std::filesystem::path& path) {
  const PgmImage img = parse_pgm(read_file(path));
  Matrix m(img.height, img.width);
  for (Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(img.pixels[static_cast<std::size_t>(i)]) /
                  static_cast<double>(img.maxval);
  return m;
}

void save_pgm(const Matrix& image, const std::filesystem::path& path, int maxval) {
  PgmImage img;
  img.width = image.cols();
  img.height = image.rows();
  img.maxval = maxval;
  img.pixels.resize(static_cast<std::size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i)
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
        std::lround(std::clamp(image.data()[i], 0.0, 1.0) * static_cast<double>(maxval)));
  write_file_atomic(path, encode_pgm(img));
}

LabelMap load_mask_pgm(const std::filesystem::path& path) {
  const PgmImage img = parse_pgm(read_file(path));
  LabelMap m(img.height, img.width);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = img.pixels[static_cast<std::size_t>(i)];
  return m;
}

void save_mask_pgm(const LabelMap& mask, const std::filesystem::path& path) {
  if (mask.size() > 0 && (mask.minCoeff() < 0 || mask.maxCoeff() > 255))
    throw std::invalid_argument("save_mask_pgm: labels must fit in 0..255");
  PgmImage img;
  img.width = mask.cols();
  img.height = mask.rows();
  img.pixels.assign(mask.data(), mask.data() + mask.size());
  write_file_atomic(path, encode_pgm(img));
}

Dataset load_manifest(const std::filesystem::path& path, int classes) {
  const std::string text = read_file(path);
  const std::filesystem::path base = path.parent_path();
  Dataset ds;
  ds.classes = classes;
  ds.provenance = "manifest " + path.string();
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected image<TAB>mask<TAB>patient-id");
    const std::string id_text = line.substr(t2 + 1);
    int pid = 0;
    const auto [end, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), pid);
    if (ec != std::errc() || end != id_text.data() + id_text.size())
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad patient id '" +
                    id_text + "'");
    const auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    Sample s;
    s.image = load_pgm(resolve(line.substr(0, t1)));
    s.mask = load_mask_pgm(resolve(line.substr(t1 + 1, t2 - t1 - 1)));
    s.patient_id = pid;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

std::filesystem::path export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::string manifest;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const std::string stem = "sample_" + std::to_string(i);
    save_pgm(ds.samples[i].image, dir / (stem + "_image.pgm"));
    save_mask_pgm(ds.samples[i].mask, dir / (stem + "_mask.pgm"));
    manifest += stem + "_image.pgm\t" + stem + "_mask.pgm\t" +
                std::to_string(ds.samples[i].patient_id) + "\n";
  }
  const auto path = dir / "manifest.tsv";
  write_file_atomic(path, manifest);
  return path;
}

std::pair<Dataset, Dataset> split_by_patient(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test-fraction", "must lie strictly between 0 and 1");
  std::set<int> unique;
  for (const Sample& s : ds.samples) unique.insert(s.patient_id);
  if (unique.size() < 2) throw ConfigError("test-fraction", "need at least 2 patients to split");

  std::vector<int> patients(unique.begin(), unique.end());
  std::mt19937_64 gen(seed);
  std::shuffle(patients.begin(), patients.end(), gen);
  const auto total = static_cast<long>(patients.size());
  const long n_test =
      std::clamp(std::lround(test_fraction * static_cast<double>(total)), 1L, total - 1);
  const std::set<int> test_ids(patients.begin(), patients.begin() + n_test);

  std::pair<Dataset, Dataset> out;
  for (Dataset* part : {&out.first, &out.second}) part->classes = ds.classes;
  out.first.provenance = ds.provenance + " | train split";
  out.second.provenance = ds.provenance + " | test split";
  for (const Sample& s : ds.samples)
    (test_ids.count(s.patient_id) ? out.second : out.first).samples.push_back(s);
  return out;
}

Dataset few_shot_subset(const Dataset& train, std::size_t n, std::uint64_t seed) {
  if (n > train.size())
    throw ConfigError("budgets", "budget " + std::to_string(n) + " exceeds " +
                                     std::to_string(train.size()) + " training images");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(seed);
  std::shuffle(order.begin(), order.end(), gen);
  Dataset out;
  out.classes = train.classes;
  out.provenance = train.provenance + " | few-shot n=" + std::to_string(n);
  out.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.samples.push_back(train.samples[order[i]]);
  return out;
}

}  // namespace msga
