/*
 * Copyright 2026 The cladapt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// ViT-style backbone: patch embedding, pre-norm transformer blocks and a
// final norm over the class token.
//
// Token batches are 2-D: B images of n tokens are stacked as [B·n × d] and
// the sequence length travels alongside. The class token is the first row of
// each image's block unless a prefix shifts it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cladapt/data.hpp"
#include "cladapt/rng.hpp"
#include "cladapt/schedule.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

enum class SizeTag { tiny, base };

std::string to_string(SizeTag tag);
SizeTag parse_size_tag(std::string_view name);

struct BackboneConfig {
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t depth = 4;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  SizeTag size_tag = SizeTag::tiny;

  static BackboneConfig tiny();
  static BackboneConfig base();
  static BackboneConfig preset(SizeTag tag);

  void validate() const;
  std::size_t num_patches() const;
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t hidden_dim() const { return mlp_ratio * embed_dim; }
};

constexpr double kLayerNormEps = 1e-6;

struct LayerNormWeights {
  Parameter gamma;
  Parameter beta;
};

struct BlockWeights {
  Parameter w_q, w_k, w_v, w_o;
  LayerNormWeights ln1, ln2;
  Parameter mlp_w1, mlp_w2;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void set_frozen(bool frozen);
  // Renames every parameter to `prefix` + field name.
  void rename(const std::string& prefix);
};

BlockWeights init_block(const BackboneConfig& cfg, Rng& rng, const std::string& prefix);

// softmax(QKᵀ/√d_k)V per head followed by the output projection.
Tensor base_attention(const Tensor& x, const BlockWeights& w, std::size_t seq_len,
                      std::size_t num_heads);
// GELU MLP without biases.
Tensor mlp_forward(const Tensor& x, const BlockWeights& w);
// x + Attn(LN(x)), then + MLP(LN(·)).
Tensor block_forward(const Tensor& x, const BlockWeights& w, std::size_t seq_len,
                     std::size_t num_heads);

enum class Projection { q, k, v };
using ProjectionFn = std::function<Tensor(const Tensor& normed, Projection which)>;

// block_forward with caller-supplied Q/K/V projections of LN(x).
Tensor block_forward_projected(const Tensor& x, const BlockWeights& w, std::size_t seq_len,
                               std::size_t num_heads, const ProjectionFn& project);

// Rows b·seq_len + offset for every image b.
std::vector<std::size_t> token_rows(std::size_t batch, std::size_t seq_len, std::size_t offset);

class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  // [B×C×H×W] or [C×H×W] images to [B·n × d] tokens: class token first,
  // positional offsets added.
  Tensor patch_embed(const Tensor& images) const;
  Tensor trunk(const Tensor& tokens, std::size_t seq_len) const;
  // Final norm over the class-token rows: [B×d].
  Tensor class_features(const Tensor& tokens, std::size_t seq_len, std::size_t cls_offset = 0) const;
  Tensor forward(const Tensor& images) const;

  std::vector<BlockWeights>& blocks() { return blocks_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }
  const BlockWeights& block(std::size_t i) const { return blocks_.at(i); }
  const LayerNormWeights& final_norm() const { return norm_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void set_frozen(bool frozen);
  bool all_frozen() const;

 private:
  BackboneConfig config_;
  Parameter patch_proj_;
  Parameter cls_token_;
  Parameter pos_embed_;
  std::vector<BlockWeights> blocks_;
  LayerNormWeights norm_;
};

Tensor layer_norm(const Tensor& x, const LayerNormWeights& w);

struct PretrainOptions {
  std::size_t epochs = 10;
  double lr0 = 0.05;
  double lr_min = 0.005;
  std::size_t batch_size = 32;
};

struct PretrainResult {
  Backbone backbone;
  std::vector<double> epoch_loss;
};

// Supervised cross-entropy on `generic` with a throwaway linear head, then
// freezes the backbone. Deterministic in `seed`.
PretrainResult pretrain_surrogate(const BackboneConfig& config, const DomainSplit& generic,
                                  std::uint64_t seed, const PretrainOptions& options = {});

}  // namespace cladapt
