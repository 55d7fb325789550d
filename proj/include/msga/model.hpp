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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msga/linalg.hpp"
#include "msga/strategy.hpp"
#include "msga/tape.hpp"

namespace msga {

/// Shape of the toy segmenter: patch-embedding transformer encoder, one
/// learned "no prompt" embedding, and a per-token two-layer mask head.
struct ModelConfig {
  Index image_h = 32;
  Index image_w = 32;
  Index patch = 4;
  Index embed_dim = 16;
  Index blocks = 2;
  Index heads = 1;
  Index classes = 3;  // includes background
  Index mlp_dim = 32;
  Index decoder_channels = 32;

  void validate() const;
  Index grid_h() const { return image_h / patch; }
  Index grid_w() const { return image_w / patch; }
  Index tokens() const { return grid_h() * grid_w(); }
};

enum class Role {
  EncoderEmbed,
  EncoderAttentionQ,
  EncoderAttentionK,
  EncoderAttentionV,
  EncoderAttentionO,
  EncoderMlp,
  EncoderNorm,
  Prompt,
  Decoder,
};

enum class Component { Encoder, Prompt, Decoder };

std::string_view role_name(Role role);
Component component_of(Role role);
std::string_view component_name(Component c);
inline bool is_attention(Role r) {
  return r == Role::EncoderAttentionQ || r == Role::EncoderAttentionK ||
         r == Role::EncoderAttentionV || r == Role::EncoderAttentionO;
}

struct ParamGroup {
  std::string name;
  Matrix value;
  Role role = Role::EncoderEmbed;
  Strategy strategy = FullAdamW{};

  /// Row vectors (biases, norm gains) cannot be rank-projected.
  bool is_matrix() const { return value.rows() > 1 && value.cols() > 1; }
};

struct ModelParams {
  ModelConfig config;
  std::vector<ParamGroup> groups;

  const ParamGroup& at(std::string_view name) const;
  ParamGroup& at(std::string_view name);
  Index element_count() const;
};

/// Closed form:
///   p²d + d                                  patch embedding
/// + B (4d² + 4d + 2dh + h + d)              blocks (q,k,v,o; two norms; MLP)
/// + d                                        prompt embedding
/// + dc + c + ck + k                          mask head
/// with d = embed_dim, h = mlp_dim, c = decoder_channels, k = classes.
Index parameter_count(const ModelConfig& config);

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Registers every group on `tape`, frozen ones as constants. Ids follow
/// `params.groups` order.
std::vector<ad::ValueId> bind_parameters(ad::Tape& tape, const ModelParams& params);

/// Records the forward pass; the result is a tokens x classes logit matrix in
/// row-major grid order.
ad::ValueId build_logits(ad::Tape& tape, const ModelParams& params,
                         std::span<const ad::ValueId> ids, const Matrix& image);

MaskLogits forward(const ModelParams& params, const Matrix& image);

/// argmax over softmax(M) along the class axis; ties go to the lowest class.
LabelMap postprocess(const MaskLogits& logits);

/// argmax over raw logits, same tie rule.
LabelMap argmax_channels(const MaskLogits& logits);

struct NamedMatrix {
  std::string name;
  Matrix value;
};

/// "MSGA1" followed by, per group: u32 name length, name bytes, u32 rows,
/// u32 cols, row-major f64 values; all little-endian.
std::string encode_checkpoint(std::span<const NamedMatrix> entries);
std::vector<NamedMatrix> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
std::vector<NamedMatrix> read_checkpoint(const std::filesystem::path& path);
/// Overwrites group values from a checkpoint; names and shapes must match.
void apply_checkpoint(ModelParams& params, std::span<const NamedMatrix> entries);

}  // namespace msga
