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

#include "msga/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "msga/error.hpp"
#include "msga/fileio.hpp"

namespace msga {

namespace {

constexpr std::string_view kMagic = "MSGA1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated", pos_);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

Matrix scaled_normal(Index rows, Index cols, Index fan_in, std::mt19937_64& gen) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(gen);
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  const auto positive = [](Index v, const char* name) {
    if (v < 1) throw ConfigError(name, "must be positive, got " + std::to_string(v));
  };
  positive(image_h, "image-size");
  positive(image_w, "image-size");
  positive(patch, "patch");
  positive(embed_dim, "embed-dim");
  positive(blocks, "blocks");
  positive(heads, "heads");
  positive(mlp_dim, "mlp-dim");
  positive(decoder_channels, "decoder-channels");
  if (image_h % patch != 0 || image_w % patch != 0)
    throw ConfigError("patch", "image " + shape_str(image_h, image_w) + " not divisible by " +
                                   std::to_string(patch));
  if (classes < 2) throw ConfigError("classes", "need at least 2 (background included)");
  if (heads != 1) throw ConfigError("heads", "only single-head attention is supported");
  if (embed_dim % heads != 0) throw ConfigError("embed-dim", "not divisible by head count");
}

std::string_view role_name(Role role) {
  switch (role) {
    case Role::EncoderEmbed: return "encoder-embed";
    case Role::EncoderAttentionQ: return "encoder-attention-q";
    case Role::EncoderAttentionK: return "encoder-attention-k";
    case Role::EncoderAttentionV: return "encoder-attention-v";
    case Role::EncoderAttentionO: return "encoder-attention-o";
    case Role::EncoderMlp: return "encoder-mlp";
    case Role::EncoderNorm: return "encoder-norm";
    case Role::Prompt: return "prompt";
    case Role::Decoder: return "decoder";
  }
  return "unknown";
}

Component component_of(Role role) {
  switch (role) {
    case Role::Prompt: return Component::Prompt;
    case Role::Decoder: return Component::Decoder;
    default: return Component::Encoder;
  }
}

std::string_view component_name(Component c) {
  switch (c) {
    case Component::Encoder: return "encoder";
    case Component::Prompt: return "prompt";
    case Component::Decoder: return "decoder";
  }
  return "unknown";
}

const ParamGroup& ModelParams::at(std::string_view name) const {
  for (const auto& g : groups)
    if (g.name == name) return g;
  throw std::out_of_range("no parameter group named " + std::string(name));
}

ParamGroup& ModelParams::at(std::string_view name) {
  return const_cast<ParamGroup&>(std::as_const(*this).at(name));
}

Index ModelParams::element_count() const {
  Index n = 0;
  for (const auto& g : groups) n += g.value.size();
  return n;
}

Index parameter_count(const ModelConfig& c) {
  const Index d = c.embed_dim, h = c.mlp_dim, ch = c.decoder_channels, k = c.classes;
  const Index p2 = c.patch * c.patch;
  return p2 * d + d + c.blocks * (4 * d * d + 4 * d + 2 * d * h + h + d) + d + d * ch + ch +
         ch * k + k;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 gen(seed);
  const Index d = config.embed_dim;
  const Index p2 = config.patch * config.patch;

  ModelParams params;
  params.config = config;
  auto add = [&](std::string name, Matrix value, Role role) {
    params.groups.push_back(ParamGroup{std::move(name), std::move(value), role, FullAdamW{}});
  };

  add("encoder/patch_embed/weight", scaled_normal(p2, d, p2, gen), Role::EncoderEmbed);
  add("encoder/patch_embed/bias", Matrix::Zero(1, d), Role::EncoderEmbed);
  for (Index b = 0; b < config.blocks; ++b) {
    const std::string pre = "encoder/block" + std::to_string(b) + "/";
    add(pre + "norm1/gain", Matrix::Ones(1, d), Role::EncoderNorm);
    add(pre + "norm1/bias", Matrix::Zero(1, d), Role::EncoderNorm);
    add(pre + "attn/q", scaled_normal(d, d, d, gen), Role::EncoderAttentionQ);
    add(pre + "attn/k", scaled_normal(d, d, d, gen), Role::EncoderAttentionK);
    add(pre + "attn/v", scaled_normal(d, d, d, gen), Role::EncoderAttentionV);
    add(pre + "attn/o", scaled_normal(d, d, d, gen), Role::EncoderAttentionO);
    add(pre + "norm2/gain", Matrix::Ones(1, d), Role::EncoderNorm);
    add(pre + "norm2/bias", Matrix::Zero(1, d), Role::EncoderNorm);
    add(pre + "mlp/fc1/weight", scaled_normal(d, config.mlp_dim, d, gen), Role::EncoderMlp);
    add(pre + "mlp/fc1/bias", Matrix::Zero(1, config.mlp_dim), Role::EncoderMlp);
    add(pre + "mlp/fc2/weight", scaled_normal(config.mlp_dim, d, config.mlp_dim, gen),
        Role::EncoderMlp);
    add(pre + "mlp/fc2/bias", Matrix::Zero(1, d), Role::EncoderMlp);
  }
  add("prompt/no_prompt_embed", Matrix::Zero(1, d), Role::Prompt);
  add("decoder/fc1/weight", scaled_normal(d, config.decoder_channels, d, gen), Role::Decoder);
  add("decoder/fc1/bias", Matrix::Zero(1, config.decoder_channels), Role::Decoder);
  add("decoder/fc2/weight",
      scaled_normal(config.decoder_channels, config.classes, config.decoder_channels, gen),
      Role::Decoder);
  add("decoder/fc2/bias", Matrix::Zero(1, config.classes), Role::Decoder);
  return params;
}

std::vector<ad::ValueId> bind_parameters(ad::Tape& tape, const ModelParams& params) {
  std::vector<ad::ValueId> ids;
  ids.reserve(params.groups.size());
  for (const auto& g : params.groups)
    ids.push_back(is_frozen(g.strategy) ? tape.constant(g.value) : tape.parameter(g.value));
  return ids;
}

ad::ValueId build_logits(ad::Tape& tape, const ModelParams& params,
                         std::span<const ad::ValueId> ids, const Matrix& image) {
  const ModelConfig& c = params.config;
  if (image.rows() != c.image_h || image.cols() != c.image_w)
    throw ShapeError("forward: image " + shape_str(image) + " but model expects " +
                     shape_str(c.image_h, c.image_w));
  if (ids.size() != params.groups.size())
    throw ShapeError("forward: " + std::to_string(ids.size()) + " bound ids for " +
                     std::to_string(params.groups.size()) + " groups");

  // Groups are laid out exactly as init_model creates them.
  std::size_t next = 0;
  auto take = [&] { return ids[next++]; };

  const ad::ValueId img = tape.constant(image);
  const ad::ValueId embed_w = take();
  const ad::ValueId embed_b = take();
  ad::ValueId x = tape.add_row(tape.matmul(tape.patchify(img, c.patch), embed_w), embed_b);

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(c.embed_dim));
  for (Index b = 0; b < c.blocks; ++b) {
    const ad::ValueId g1 = take(), b1 = take();
    const ad::ValueId wq = take(), wk = take(), wv = take(), wo = take();
    const ad::ValueId g2 = take(), b2 = take();
    const ad::ValueId fc1w = take(), fc1b = take(), fc2w = take(), fc2b = take();

    const ad::ValueId h = tape.layernorm(x, g1, b1);
    const ad::ValueId q = tape.matmul(h, wq);
    const ad::ValueId k = tape.matmul(h, wk);
    const ad::ValueId v = tape.matmul(h, wv);
    const ad::ValueId scores = tape.scale(tape.matmul(q, tape.transpose(k)), attn_scale);
    const ad::ValueId attn = tape.matmul(tape.matmul(tape.row_softmax(scores), v), wo);
    x = tape.add(x, attn);

    const ad::ValueId h2 = tape.layernorm(x, g2, b2);
    const ad::ValueId hidden = tape.gelu(tape.add_row(tape.matmul(h2, fc1w), fc1b));
    x = tape.add(x, tape.add_row(tape.matmul(hidden, fc2w), fc2b));
  }

  const ad::ValueId prompt = take();
  const std::vector<Index> broadcast(static_cast<std::size_t>(c.tokens()), 0);
  x = tape.add(x, tape.embed_lookup(prompt, broadcast));

  const ad::ValueId d1w = take(), d1b = take(), d2w = take(), d2b = take();
  const ad::ValueId hidden = tape.gelu(tape.add_row(tape.matmul(x, d1w), d1b));
  return tape.add_row(tape.matmul(hidden, d2w), d2b);
}

MaskLogits forward(const ModelParams& params, const Matrix& image) {
  ad::Tape tape;
  std::vector<ad::ValueId> ids;
  ids.reserve(params.groups.size());
  for (const auto& g : params.groups) ids.push_back(tape.constant(g.value));
  const ad::ValueId logits = build_logits(tape, params, ids, image);
  return MaskLogits::from_matrix(tape.value(logits), params.config.grid_h(),
                                 params.config.grid_w());
}

LabelMap argmax_channels(const MaskLogits& logits) {
  LabelMap out(logits.dim0(), logits.dim1());
  for (Index i = 0; i < logits.dim0(); ++i)
    for (Index j = 0; j < logits.dim1(); ++j) {
      const auto f = logits.fiber(i, j);
      std::size_t best = 0;
      for (std::size_t c = 1; c < f.size(); ++c)
        if (f[c] > f[best]) best = c;
      out(i, j) = static_cast<int>(best);
    }
  return out;
}

LabelMap postprocess(const MaskLogits& logits) {
  return argmax_channels(softmax_last_dim(logits));
}

std::string encode_checkpoint(std::span<const NamedMatrix> entries) {
  std::string out(kMagic);
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
    for (Index i = 0; i < e.value.size(); ++i) put_f64(out, e.value.data()[i]);
  }
  return out;
}

std::vector<NamedMatrix> decode_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("bad checkpoint magic", 0);
  Reader in(bytes.substr(kMagic.size()));
  std::vector<NamedMatrix> out;
  while (!in.done()) {
    NamedMatrix e;
    const auto len = in.uint(4);
    e.name = std::string(in.take(len));
    const auto rows = static_cast<Index>(in.uint(4));
    const auto cols = static_cast<Index>(in.uint(4));
    if (rows * cols > static_cast<Index>(bytes.size()))
      throw FormatError("checkpoint group " + e.name + " larger than file",
                        kMagic.size() + in.pos());
    e.value.resize(rows, cols);
    for (Index i = 0; i < e.value.size(); ++i)
      e.value.data()[i] = std::bit_cast<double>(in.uint(8));
    out.push_back(std::move(e));
  }
  return out;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::vector<NamedMatrix> entries;
  entries.reserve(params.groups.size());
  for (const auto& g : params.groups) entries.push_back({g.name, g.value});
  write_file_atomic(path, encode_checkpoint(entries));
}

std::vector<NamedMatrix> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void apply_checkpoint(ModelParams& params, std::span<const NamedMatrix> entries) {
  if (entries.size() != params.groups.size())
    throw ShapeError("checkpoint has " + std::to_string(entries.size()) + " groups, model has " +
                     std::to_string(params.groups.size()));
  std::set<std::string> seen;
  for (const auto& e : entries) {
    ParamGroup& g = params.at(e.name);
    if (!seen.insert(e.name).second) throw ShapeError("checkpoint repeats group " + e.name);
    if (g.value.rows() != e.value.rows() || g.value.cols() != e.value.cols())
      throw ShapeError("checkpoint group " + e.name + " is " + shape_str(e.value) +
                       ", model expects " + shape_str(g.value));
    g.value = e.value;
  }
}

}  // namespace msga
