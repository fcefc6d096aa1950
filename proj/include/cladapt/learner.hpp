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

// Common surface of every continual-learning method: register a domain,
// extract features, classify with the domain's head.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cladapt/backbone.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

enum class Method { ours, ours_no_gate, prefix, block_expand, seq_lora, full_ft };

std::string to_string(Method method);
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();

// Which representation to read. Registered-domain mode picks that domain's
// view; merged mode is the model's domain-agnostic view.
struct FeatureSelector {
  std::size_t domain = 0;
  bool merged = false;

  static FeatureSelector of(std::size_t domain) { return {domain, false}; }
  static FeatureSelector merged_view() { return {0, true}; }
};

struct LearnerOptions {
  std::size_t rank = 16;
  double alpha = 64.0;
  std::size_t prefix_len = 8;
  std::uint64_t seed = 0;
};

struct ParamReport {
  std::size_t backbone = 0;
  std::vector<std::size_t> per_domain;
  std::size_t trainable = 0;
  std::size_t frozen = 0;

  std::size_t adapters() const;
  std::size_t total() const { return trainable + frozen; }
};

struct DomainHead {
  Parameter weight;  // d × num_classes
  Parameter bias;    // num_classes
  std::size_t num_classes = 0;

  static DomainHead create(const std::string& prefix, std::size_t dim, std::size_t num_classes,
                           Rng& rng);
  std::size_t numel() const { return weight.numel() + bias.numel(); }
  void set_frozen(bool frozen);
};

Tensor head_forward(const Tensor& features, const DomainHead& head);

class Learner {
 public:
  virtual ~Learner() = default;

  virtual Method method() const = 0;
  // Registers the next domain and freezes everything owned by earlier ones.
  virtual std::size_t begin_domain(std::size_t num_classes) = 0;
  virtual std::size_t num_domains() const = 0;
  // [B×d] features for [B×C×H×W] images.
  virtual Tensor features(const Tensor& images, const FeatureSelector& selector) const = 0;
  virtual const DomainHead& head(std::size_t domain) const = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::vector<const Parameter*> parameters() const = 0;
  virtual ParamReport param_report() const = 0;
  virtual const BackboneConfig& config() const = 0;

  Tensor logits(const Tensor& images, std::size_t domain) const;
  std::vector<Parameter*> trainable_parameters();
};

std::unique_ptr<Learner> make_learner(Method method, const Backbone& pretrained,
                                      const LearnerOptions& options);

// Tallies trainable and frozen element counts.
void tally(ParamReport& report, const std::vector<const Parameter*>& params);

}  // namespace cladapt
