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

// Gated multi-domain LoRA attention.
//
// Every registered domain owns one feature stream through the frozen
// backbone. In each block, domain j projects its own normalized stream with
// its LoRA-augmented Q/K/V and adds the projections of every earlier domain i
// after passing them through its gate:
//
//   Q_j = Σ_{i<j} σ(P_i·W_g^j) ⊙ P_i + P_j,    P_i = x_i·W_q + (α/r)(x_i·A_i)·B_i
//
// and likewise for K and V. The MLP is the frozen backbone MLP applied to the
// stacked streams. Stream i never reads parameters of a later domain, so it
// is bitwise unaffected by domains added after it.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cladapt/backbone.hpp"
#include "cladapt/learner.hpp"
#include "cladapt/rng.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

struct LoraAdapter {
  Parameter a;  // d × r
  Parameter b;  // r × k
  double alpha = 1.0;
  std::size_t rank = 0;

  // A ~ N(0, 0.02²), B = 0.
  static LoraAdapter create(const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
                            std::size_t rank, double alpha, Rng& rng);
  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t numel() const { return a.numel() + b.numel(); }
  void set_frozen(bool frozen);
  bool frozen() const { return a.frozen() && b.frozen(); }
};

constexpr double kLoraInitStd = 0.02;

// (α/r)·(x·A)·B
Tensor lora_delta(const Tensor& x, const LoraAdapter& adapter);
// x·W0 + (α/r)·(x·A)·B in factored form.
Tensor lora_project(const Tensor& x, const Parameter& w0, const LoraAdapter& adapter);

struct GateUnit {
  Parameter w_g;  // d × d
};

// σ(prev·W_g) ⊙ prev
Tensor gate_apply(const Tensor& prev, const GateUnit& gate);

struct BlockAdapters {
  LoraAdapter q, k, v;
  std::optional<GateUnit> gate;
};

struct DomainAdapterSet {
  std::size_t domain_id = 0;
  std::vector<BlockAdapters> blocks;
  DomainHead head;
  bool frozen = false;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t numel() const;
  void set_frozen(bool value);
};

enum class GateMode {
  learned,   // σ(P·W_g) ⊙ P
  identity,  // prior projections pass through unchanged (gate ≡ 1)
};

struct StreamQKV {
  Tensor q, k, v;
};

// depth·(3·(d·r + r·d) + d·d) + d·C + C, dropping the gate term without gating.
std::size_t domain_parameter_count(std::size_t dim, std::size_t depth, std::size_t rank,
                                   std::size_t num_classes, bool gated);

Tensor merge_outputs(std::span<const Tensor> streams);

class ContinualModel {
 public:
  ContinualModel() = default;
  explicit ContinualModel(Backbone backbone, GateMode mode = GateMode::learned);

  const Backbone& backbone() const { return backbone_; }
  const BackboneConfig& config() const { return backbone_.config(); }
  GateMode gate_mode() const { return mode_; }

  // Appends a domain: A ~ N(0, 0.02²), B = 0, W_g = 0, head seeded from
  // `seed`; freezes the backbone and every earlier domain.
  std::size_t add_domain(std::size_t num_classes, std::size_t rank, double alpha,
                         std::uint64_t seed);
  std::size_t num_domains() const { return domains_.size(); }
  const DomainAdapterSet& domain(std::size_t id) const;
  DomainAdapterSet& domain(std::size_t id);

  // `normed_streams` holds the normalized inputs of streams 0..S-1, S ≤ T.
  std::vector<StreamQKV> gated_qkv(std::span<const Tensor> normed_streams,
                                   std::size_t block_id) const;
  std::vector<Tensor> multi_block_forward(std::span<const Tensor> streams, std::size_t block_id,
                                          std::size_t seq_len) const;
  // Class features [B×d] of streams 0..count-1 (all registered when omitted).
  std::vector<Tensor> stream_features(const Tensor& images,
                                      std::optional<std::size_t> count = std::nullopt) const;
  Tensor head_forward(const Tensor& features, std::size_t domain_id) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  ParamReport param_report() const;

 private:
  Backbone backbone_;
  GateMode mode_ = GateMode::learned;
  std::vector<DomainAdapterSet> domains_;
};

}  // namespace cladapt
