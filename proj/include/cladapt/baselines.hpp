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

// Parameter-efficient baselines adapted to domain sequences, plus full
// fine-tuning. Every model carries one classification head per domain; only
// the newest domain's parameters train.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cladapt/adapters.hpp"
#include "cladapt/backbone.hpp"
#include "cladapt/learner.hpp"

namespace cladapt {

// Learned m×d prefix rows prepended to the token sequence per domain.
class PrefixModel final : public Learner {
 public:
  static constexpr std::size_t kDefaultLength = 8;

  PrefixModel(Backbone backbone, std::size_t prefix_len, std::uint64_t seed);

  Method method() const override { return Method::prefix; }
  std::size_t begin_domain(std::size_t num_classes) override;
  std::size_t num_domains() const override { return prefixes_.size(); }
  // Registered-domain mode reads that domain's prefix; merged mode reads the
  // newest prefix.
  Tensor features(const Tensor& images, const FeatureSelector& selector) const override;
  const DomainHead& head(std::size_t domain) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const override;
  ParamReport param_report() const override;
  const BackboneConfig& config() const override { return backbone_.config(); }

  // Class features with [P_domain; X] as the input sequence.
  Tensor prefix_forward(const Tensor& images, std::size_t domain) const;
  // Sequence length seen by the trunk.
  std::size_t sequence_length() const { return prefix_len_ + backbone_.config().num_tokens(); }
  std::size_t prefix_length() const { return prefix_len_; }
  const Parameter& prefix(std::size_t domain) const { return prefixes_.at(domain); }
  const Backbone& backbone() const { return backbone_; }

 private:
  Backbone backbone_;
  std::size_t prefix_len_;
  std::uint64_t seed_;
  std::vector<Parameter> prefixes_;
  std::vector<DomainHead> heads_;
};

// Appends one zero-initialized copy of the topmost block per domain.
class BlockExpansionModel final : public Learner {
 public:
  BlockExpansionModel(Backbone backbone, std::uint64_t seed);

  Method method() const override { return Method::block_expand; }
  std::size_t begin_domain(std::size_t num_classes) override;
  std::size_t num_domains() const override { return heads_.size(); }
  Tensor features(const Tensor& images, const FeatureSelector& selector) const override;
  const DomainHead& head(std::size_t domain) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const override;
  ParamReport param_report() const override;
  const BackboneConfig& config() const override { return backbone_.config(); }

  // Inserts the identity block without registering a head.
  void expand_for_domain();
  Tensor forward(const Tensor& images) const;
  const std::vector<BlockWeights>& expansions() const { return expansions_; }
  std::size_t total_blocks() const { return backbone_.config().depth + expansions_.size(); }

 private:
  Backbone backbone_;
  std::uint64_t seed_;
  std::vector<BlockWeights> expansions_;
  std::vector<DomainHead> heads_;
};

// W₀ + Σ_i (α/r)·A_i·B_i on every Q/K/V projection, all terms active.
class SequentialLoraModel final : public Learner {
 public:
  SequentialLoraModel(Backbone backbone, std::size_t rank, double alpha, std::uint64_t seed);

  Method method() const override { return Method::seq_lora; }
  std::size_t begin_domain(std::size_t num_classes) override;
  std::size_t num_domains() const override { return updates_.size(); }
  Tensor features(const Tensor& images, const FeatureSelector& selector) const override;
  const DomainHead& head(std::size_t domain) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const override;
  ParamReport param_report() const override;
  const BackboneConfig& config() const override { return backbone_.config(); }

  Tensor forward(const Tensor& images) const;
  // x·W₀ + Σ_i (α_i/r)(x·A_i)·B_i with i ascending.
  Tensor project(const Tensor& x, std::size_t block, Projection which) const;
  BlockAdapters& update(std::size_t domain, std::size_t block) { return updates_.at(domain).at(block); }

 private:
  Backbone backbone_;
  std::size_t rank_;
  double alpha_;
  std::uint64_t seed_;
  std::vector<std::vector<BlockAdapters>> updates_;
  std::vector<DomainHead> heads_;
};

// Every backbone weight trains at every stage.
class FullFinetuneModel final : public Learner {
 public:
  FullFinetuneModel(Backbone backbone, std::uint64_t seed);

  Method method() const override { return Method::full_ft; }
  std::size_t begin_domain(std::size_t num_classes) override;
  std::size_t num_domains() const override { return heads_.size(); }
  Tensor features(const Tensor& images, const FeatureSelector& selector) const override;
  const DomainHead& head(std::size_t domain) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const override;
  ParamReport param_report() const override;
  const BackboneConfig& config() const override { return backbone_.config(); }

  const Backbone& backbone() const { return backbone_; }

 private:
  Backbone backbone_;
  std::uint64_t seed_;
  std::vector<DomainHead> heads_;
};

// One supervised SGD step on `domain`'s head; returns the batch loss.
double full_finetune_step(FullFinetuneModel& model, const Tensor& images,
                          std::span<const std::uint32_t> labels, std::size_t domain, double lr);

// Gated multi-domain LoRA behind the Learner surface.
class GatedLoraLearner final : public Learner {
 public:
  GatedLoraLearner(Backbone backbone, GateMode mode, std::size_t rank, double alpha,
                   std::uint64_t seed);

  Method method() const override {
    return model_.gate_mode() == GateMode::learned ? Method::ours : Method::ours_no_gate;
  }
  std::size_t begin_domain(std::size_t num_classes) override;
  std::size_t num_domains() const override { return model_.num_domains(); }
  // Registered-domain mode reads that domain's stream; merged mode averages
  // all streams.
  Tensor features(const Tensor& images, const FeatureSelector& selector) const override;
  const DomainHead& head(std::size_t domain) const override;
  std::vector<Parameter*> parameters() override { return model_.parameters(); }
  std::vector<const Parameter*> parameters() const override { return model_.parameters(); }
  ParamReport param_report() const override { return model_.param_report(); }
  const BackboneConfig& config() const override { return model_.config(); }

  const ContinualModel& model() const { return model_; }
  ContinualModel& model() { return model_; }

 private:
  ContinualModel model_;
  std::size_t rank_;
  double alpha_;
  std::uint64_t seed_;
};

}  // namespace cladapt
