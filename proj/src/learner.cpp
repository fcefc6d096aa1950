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
#include "cladapt/learner.hpp"

#include <array>
#include <cmath>

#include "cladapt/baselines.hpp"
#include "cladapt/init.hpp"

namespace cladapt {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 6> kMethodNames{{
    {Method::ours, "ours"},
    {Method::ours_no_gate, "ours_no_gate"},
    {Method::prefix, "prefix"},
    {Method::block_expand, "block_expand"},
    {Method::seq_lora, "seq_lora"},
    {Method::full_ft, "full_ft"},
}};


}  // namespace

std::string to_string(Method method) {
  for (const auto& [m, name] : kMethodNames)
    if (m == method) return std::string(name);
  throw Error("unknown method value");
}

Method parse_method(std::string_view name) {
  for (const auto& [m, n] : kMethodNames)
    if (n == name) return m;
  throw Error("unknown method '" + std::string(name) +
              "' (expected ours, ours_no_gate, prefix, block_expand, seq_lora or full_ft)");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = [] {
    std::vector<Method> out;
    for (const auto& entry : kMethodNames) out.push_back(entry.first);
    return out;
  }();
  return methods;
}

std::size_t ParamReport::adapters() const {
  std::size_t n = 0;
  for (std::size_t v : per_domain) n += v;
  return n;
}

DomainHead DomainHead::create(const std::string& prefix, std::size_t dim, std::size_t num_classes,
                              Rng& rng) {
  if (num_classes == 0) throw Error("head: a domain needs at least one class");
  DomainHead head;
  // Linear-layer scale 1/√d.
  head.weight = gaussian_parameter(prefix + "weight", {dim, num_classes},
                                   1.0 / std::sqrt(static_cast<double>(dim)), rng);
  head.bias = Parameter(prefix + "bias", Tensor({num_classes}, 0.0));
  head.num_classes = num_classes;
  return head;
}

void DomainHead::set_frozen(bool frozen) {
  weight.set_frozen(frozen);
  bias.set_frozen(frozen);
}

Tensor head_forward(const Tensor& features, const DomainHead& head) {
  return add_row(matmul(features, head.weight.value()), head.bias.value());
}

Tensor Learner::logits(const Tensor& images, std::size_t domain) const {
  return head_forward(features(images, FeatureSelector::of(domain)), head(domain));
}

std::vector<Parameter*> Learner::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (!p->frozen()) out.push_back(p);
  return out;
}

std::unique_ptr<Learner> make_learner(Method method, const Backbone& pretrained,
                                      const LearnerOptions& options) {
  switch (method) {
    case Method::ours:
      return std::make_unique<GatedLoraLearner>(pretrained, GateMode::learned, options.rank,
                                                options.alpha, options.seed);
    case Method::ours_no_gate:
      return std::make_unique<GatedLoraLearner>(pretrained, GateMode::identity, options.rank,
                                                options.alpha, options.seed);
    case Method::prefix:
      return std::make_unique<PrefixModel>(pretrained, options.prefix_len, options.seed);
    case Method::block_expand:
      return std::make_unique<BlockExpansionModel>(pretrained, options.seed);
    case Method::seq_lora:
      return std::make_unique<SequentialLoraModel>(pretrained, options.rank, options.alpha,
                                                   options.seed);
    case Method::full_ft:
      return std::make_unique<FullFinetuneModel>(pretrained, options.seed);
  }
  throw Error("make_learner: unknown method");
}

void tally(ParamReport& report, const std::vector<const Parameter*>& params) {
  report.trainable = 0;
  report.frozen = 0;
  for (const Parameter* p : params) (p->frozen() ? report.frozen : report.trainable) += p->numel();
}

}  // namespace cladapt
