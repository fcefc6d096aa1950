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
#include "cladapt/baselines.hpp"

#include "cladapt/init.hpp"
#include "cladapt/schedule.hpp"

namespace cladapt {

namespace {

const DomainHead& head_at(const std::vector<DomainHead>& heads, std::size_t domain) {
  if (domain >= heads.size()) throw Error("unknown domain id " + std::to_string(domain));
  return heads[domain];
}

void require_registered(std::size_t domain, std::size_t count) {
  if (domain >= count) throw Error("unknown domain id " + std::to_string(domain));
}

std::string domain_root(const char* method, std::size_t id) {
  return std::string(method) + ".domain" + std::to_string(id) + ".";
}

void append_heads(std::vector<const Parameter*>& out, const std::vector<DomainHead>& heads) {
  for (const auto& h : heads) {
    out.push_back(&h.weight);
    out.push_back(&h.bias);
  }
}

void append_heads(std::vector<Parameter*>& out, std::vector<DomainHead>& heads) {
  for (auto& h : heads) {
    out.push_back(&h.weight);
    out.push_back(&h.bias);
  }
}

}  // namespace

// ---- prefix tuning --------------------------------------------------------

PrefixModel::PrefixModel(Backbone backbone, std::size_t prefix_len, std::uint64_t seed)
    : backbone_(std::move(backbone)), prefix_len_(prefix_len), seed_(seed) {
  backbone_.set_frozen(true);
}

std::size_t PrefixModel::begin_domain(std::size_t num_classes) {
  for (auto& p : prefixes_) p.freeze();
  for (auto& h : heads_) h.set_frozen(true);
  const std::size_t id = prefixes_.size();
  const std::string root = domain_root("prefix", id);
  Rng rng(mix_seed(seed_, id));
  const std::size_t d = backbone_.config().embed_dim;
  // An empty prefix receives no gradient, so it is frozen from the start.
  prefixes_.push_back(gaussian_parameter(root + "P", {prefix_len_, d}, 0.02, rng));
  if (prefix_len_ == 0) prefixes_.back().freeze();
  heads_.push_back(DomainHead::create(root + "head.", d, num_classes, rng));
  return id;
}

Tensor PrefixModel::prefix_forward(const Tensor& images, std::size_t domain) const {
  require_registered(domain, prefixes_.size());
  const std::size_t n = backbone_.config().num_tokens();
  Tensor tokens = backbone_.patch_embed(images);
  if (prefix_len_ == 0) return backbone_.class_features(backbone_.trunk(tokens, n), n);
  const std::size_t m = prefix_len_, batch = tokens.rows() / n, seq = m + n;
  std::vector<std::size_t> order(batch * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < m; ++t) order[b * seq + t] = t;
    for (std::size_t t = 0; t < n; ++t) order[b * seq + m + t] = m + b * n + t;
  }
  const Tensor parts[] = {prefixes_[domain].value(), tokens};
  Tensor prefixed = gather_rows(concat_rows(parts), order);
  return backbone_.class_features(backbone_.trunk(prefixed, seq), seq, m);
}

Tensor PrefixModel::features(const Tensor& images, const FeatureSelector& selector) const {
  if (prefixes_.empty()) throw Error("prefix: no domain registered");
  return prefix_forward(images, selector.merged ? prefixes_.size() - 1 : selector.domain);
}

const DomainHead& PrefixModel::head(std::size_t domain) const { return head_at(heads_, domain); }

std::vector<Parameter*> PrefixModel::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  for (auto& p : prefixes_) out.push_back(&p);
  append_heads(out, heads_);
  return out;
}

std::vector<const Parameter*> PrefixModel::parameters() const {
  std::vector<const Parameter*> out = backbone_.parameters();
  for (const auto& p : prefixes_) out.push_back(&p);
  append_heads(out, heads_);
  return out;
}

ParamReport PrefixModel::param_report() const {
  ParamReport report;
  report.backbone = backbone_.parameter_count();
  for (std::size_t i = 0; i < prefixes_.size(); ++i)
    report.per_domain.push_back(prefixes_[i].numel() + heads_[i].numel());
  tally(report, parameters());
  return report;
}

// ---- block expansion ------------------------------------------------------

BlockExpansionModel::BlockExpansionModel(Backbone backbone, std::uint64_t seed)
    : backbone_(std::move(backbone)), seed_(seed) {
  backbone_.set_frozen(true);
}

void BlockExpansionModel::expand_for_domain() {
  for (auto& b : expansions_) b.set_frozen(true);
  const BlockWeights& top = expansions_.empty() ? backbone_.blocks().back() : expansions_.back();
  BlockWeights block = top;
  // Zero residual-branch outputs make the new block an exact identity.
  for (auto& v : block.w_o.value().mutable_data()) v = 0.0;
  for (auto& v : block.mlp_w2.value().mutable_data()) v = 0.0;
  block.rename(domain_root("expand", expansions_.size()) + "block.");
  block.set_frozen(false);
  expansions_.push_back(std::move(block));
}

std::size_t BlockExpansionModel::begin_domain(std::size_t num_classes) {
  for (auto& h : heads_) h.set_frozen(true);
  const std::size_t id = heads_.size();
  expand_for_domain();
  Rng rng(mix_seed(seed_, id));
  heads_.push_back(DomainHead::create(domain_root("expand", id) + "head.",
                                     backbone_.config().embed_dim, num_classes, rng));
  return id;
}

Tensor BlockExpansionModel::forward(const Tensor& images) const {
  const auto& cfg = backbone_.config();
  const std::size_t n = cfg.num_tokens();
  Tensor x = backbone_.trunk(backbone_.patch_embed(images), n);
  for (const auto& block : expansions_) x = block_forward(x, block, n, cfg.num_heads);
  return backbone_.class_features(x, n);
}

Tensor BlockExpansionModel::features(const Tensor& images, const FeatureSelector& selector) const {
  if (!selector.merged) require_registered(selector.domain, heads_.size());
  return forward(images);
}

const DomainHead& BlockExpansionModel::head(std::size_t domain) const {
  return head_at(heads_, domain);
}

std::vector<Parameter*> BlockExpansionModel::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  for (auto& b : expansions_)
    for (Parameter* p : b.parameters()) out.push_back(p);
  append_heads(out, heads_);
  return out;
}

std::vector<const Parameter*> BlockExpansionModel::parameters() const {
  std::vector<const Parameter*> out = backbone_.parameters();
  for (const auto& b : expansions_)
    for (const Parameter* p : b.parameters()) out.push_back(p);
  append_heads(out, heads_);
  return out;
}

ParamReport BlockExpansionModel::param_report() const {
  ParamReport report;
  report.backbone = backbone_.parameter_count();
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    std::size_t n = heads_[i].numel();
    for (const Parameter* p : expansions_[i].parameters()) n += p->numel();
    report.per_domain.push_back(n);
  }
  tally(report, parameters());
  return report;
}

// ---- sequential LoRA ------------------------------------------------------

SequentialLoraModel::SequentialLoraModel(Backbone backbone, std::size_t rank, double alpha,
                                         std::uint64_t seed)
    : backbone_(std::move(backbone)), rank_(rank), alpha_(alpha), seed_(seed) {
  backbone_.set_frozen(true);
}

std::size_t SequentialLoraModel::begin_domain(std::size_t num_classes) {
  for (auto& blocks : updates_)
    for (auto& b : blocks) {
      b.q.set_frozen(true);
      b.k.set_frozen(true);
      b.v.set_frozen(true);
    }
  for (auto& h : heads_) h.set_frozen(true);
  const auto& cfg = backbone_.config();
  const std::size_t id = updates_.size(), d = cfg.embed_dim;
  const std::string root = domain_root("seqlora", id);
  Rng rng(mix_seed(seed_, id));
  std::vector<BlockAdapters> blocks;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string prefix = root + "block" + std::to_string(b) + ".";
    BlockAdapters blk;
    blk.q = LoraAdapter::create(prefix + "q.", d, d, rank_, alpha_, rng);
    blk.k = LoraAdapter::create(prefix + "k.", d, d, rank_, alpha_, rng);
    blk.v = LoraAdapter::create(prefix + "v.", d, d, rank_, alpha_, rng);
    blocks.push_back(std::move(blk));
  }
  updates_.push_back(std::move(blocks));
  heads_.push_back(DomainHead::create(root + "head.", d, num_classes, rng));
  return id;
}

Tensor SequentialLoraModel::project(const Tensor& x, std::size_t block, Projection which) const {
  const BlockWeights& w = backbone_.block(block);
  const Parameter& base = which == Projection::q ? w.w_q : which == Projection::k ? w.w_k : w.w_v;
  Tensor out = matmul(x, base.value());
  for (const auto& domain : updates_) {
    const BlockAdapters& ad = domain[block];
    const LoraAdapter& lora = which == Projection::q ? ad.q : which == Projection::k ? ad.k : ad.v;
    out = add(out, lora_delta(x, lora));
  }
  return out;
}

Tensor SequentialLoraModel::forward(const Tensor& images) const {
  const auto& cfg = backbone_.config();
  const std::size_t n = cfg.num_tokens();
  Tensor x = backbone_.patch_embed(images);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    x = block_forward_projected(x, backbone_.block(b), n, cfg.num_heads,
                                [&](const Tensor& h, Projection which) { return project(h, b, which); });
  }
  return backbone_.class_features(x, n);
}

Tensor SequentialLoraModel::features(const Tensor& images, const FeatureSelector& selector) const {
  if (!selector.merged) require_registered(selector.domain, heads_.size());
  return forward(images);
}

const DomainHead& SequentialLoraModel::head(std::size_t domain) const {
  return head_at(heads_, domain);
}

std::vector<Parameter*> SequentialLoraModel::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  for (auto& blocks : updates_)
    for (auto& b : blocks)
      for (LoraAdapter* ad : {&b.q, &b.k, &b.v}) {
        out.push_back(&ad->a);
        out.push_back(&ad->b);
      }
  append_heads(out, heads_);
  return out;
}

std::vector<const Parameter*> SequentialLoraModel::parameters() const {
  std::vector<const Parameter*> out = backbone_.parameters();
  for (const auto& blocks : updates_)
    for (const auto& b : blocks)
      for (const LoraAdapter* ad : {&b.q, &b.k, &b.v}) {
        out.push_back(&ad->a);
        out.push_back(&ad->b);
      }
  append_heads(out, heads_);
  return out;
}

ParamReport SequentialLoraModel::param_report() const {
  ParamReport report;
  report.backbone = backbone_.parameter_count();
  for (std::size_t i = 0; i < updates_.size(); ++i) {
    std::size_t n = heads_[i].numel();
    for (const auto& b : updates_[i]) n += b.q.numel() + b.k.numel() + b.v.numel();
    report.per_domain.push_back(n);
  }
  tally(report, parameters());
  return report;
}

// ---- full fine-tuning -----------------------------------------------------

FullFinetuneModel::FullFinetuneModel(Backbone backbone, std::uint64_t seed)
    : backbone_(std::move(backbone)), seed_(seed) {
  backbone_.set_frozen(false);
}

std::size_t FullFinetuneModel::begin_domain(std::size_t num_classes) {
  backbone_.set_frozen(false);
  for (auto& h : heads_) h.set_frozen(true);
  const std::size_t id = heads_.size();
  Rng rng(mix_seed(seed_, id));
  heads_.push_back(DomainHead::create(domain_root("fullft", id) + "head.",
                                     backbone_.config().embed_dim, num_classes, rng));
  return id;
}

Tensor FullFinetuneModel::features(const Tensor& images, const FeatureSelector& selector) const {
  if (!selector.merged) require_registered(selector.domain, heads_.size());
  return backbone_.forward(images);
}

const DomainHead& FullFinetuneModel::head(std::size_t domain) const {
  return head_at(heads_, domain);
}

std::vector<Parameter*> FullFinetuneModel::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  append_heads(out, heads_);
  return out;
}

std::vector<const Parameter*> FullFinetuneModel::parameters() const {
  std::vector<const Parameter*> out = backbone_.parameters();
  append_heads(out, heads_);
  return out;
}

ParamReport FullFinetuneModel::param_report() const {
  ParamReport report;
  report.backbone = backbone_.parameter_count();
  for (const auto& h : heads_) report.per_domain.push_back(h.numel());
  tally(report, parameters());
  return report;
}

double full_finetune_step(FullFinetuneModel& model, const Tensor& images,
                          std::span<const std::uint32_t> labels, std::size_t domain, double lr) {
  Tape tape;
  double loss_value;
  {
    TapeScope scope(tape);
    Tensor loss = cross_entropy(model.logits(images, domain), labels);
    tape.backward(loss);
    loss_value = loss.item();
  }
  auto params = model.trainable_parameters();
  sgd_step(params, lr);
  return loss_value;
}

// ---- gated multi-domain LoRA ----------------------------------------------

GatedLoraLearner::GatedLoraLearner(Backbone backbone, GateMode mode, std::size_t rank,
                                   double alpha, std::uint64_t seed)
    : model_(std::move(backbone), mode), rank_(rank), alpha_(alpha), seed_(seed) {}

std::size_t GatedLoraLearner::begin_domain(std::size_t num_classes) {
  return model_.add_domain(num_classes, rank_, alpha_, mix_seed(seed_, model_.num_domains()));
}

Tensor GatedLoraLearner::features(const Tensor& images, const FeatureSelector& selector) const {
  if (selector.merged) {
    const auto streams = model_.stream_features(images);
    return merge_outputs(streams);
  }
  require_registered(selector.domain, model_.num_domains());
  return model_.stream_features(images, selector.domain + 1).back();
}

const DomainHead& GatedLoraLearner::head(std::size_t domain) const {
  return model_.domain(domain).head;
}

}  // namespace cladapt
