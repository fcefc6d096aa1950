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
#include "cladapt/adapters.hpp"

#include "cladapt/init.hpp"

namespace cladapt {

LoraAdapter LoraAdapter::create(const std::string& prefix, std::size_t in_dim,
                                std::size_t out_dim, std::size_t rank, double alpha, Rng& rng) {
  if (rank == 0) throw Error("lora: rank must be positive");
  LoraAdapter adapter;
  adapter.a = gaussian_parameter(prefix + "A", {in_dim, rank}, kLoraInitStd, rng);
  adapter.b = Parameter(prefix + "B", Tensor({rank, out_dim}, 0.0));
  adapter.alpha = alpha;
  adapter.rank = rank;
  return adapter;
}

void LoraAdapter::set_frozen(bool frozen) {
  a.set_frozen(frozen);
  b.set_frozen(frozen);
}

Tensor lora_delta(const Tensor& x, const LoraAdapter& adapter) {
  return scale(matmul(matmul(x, adapter.a.value()), adapter.b.value()), adapter.scaling());
}

Tensor lora_project(const Tensor& x, const Parameter& w0, const LoraAdapter& adapter) {
  const auto& w = w0.value();
  if (adapter.a.value().rows() != w.rows() || adapter.b.value().cols() != w.cols()) {
    throw DimensionError("lora_project: adapter " + shape_to_string(adapter.a.value().shape()) +
                         "·" + shape_to_string(adapter.b.value().shape()) +
                         " does not match base weight " + shape_to_string(w.shape()));
  }
  return add(matmul(x, w), lora_delta(x, adapter));
}

Tensor gate_apply(const Tensor& prev, const GateUnit& gate) {
  return mul(sigmoid(matmul(prev, gate.w_g.value())), prev);
}

std::vector<Parameter*> DomainAdapterSet::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : blocks) {
    for (LoraAdapter* ad : {&b.q, &b.k, &b.v}) {
      out.push_back(&ad->a);
      out.push_back(&ad->b);
    }
    if (b.gate) out.push_back(&b.gate->w_g);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<const Parameter*> DomainAdapterSet::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& b : blocks) {
    for (const LoraAdapter* ad : {&b.q, &b.k, &b.v}) {
      out.push_back(&ad->a);
      out.push_back(&ad->b);
    }
    if (b.gate) out.push_back(&b.gate->w_g);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::size_t DomainAdapterSet::numel() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->numel();
  return n;
}

void DomainAdapterSet::set_frozen(bool value) {
  frozen = value;
  for (Parameter* p : parameters()) p->set_frozen(value);
}

std::size_t domain_parameter_count(std::size_t dim, std::size_t depth, std::size_t rank,
                                   std::size_t num_classes, bool gated) {
  const std::size_t per_block = 3 * (dim * rank + rank * dim) + (gated ? dim * dim : 0);
  return depth * per_block + dim * num_classes + num_classes;
}

Tensor merge_outputs(std::span<const Tensor> streams) {
  if (streams.empty()) throw Error("merge_outputs: no streams to merge");
  if (streams.size() == 1) return streams.front();
  Tensor total = streams.front();
  for (std::size_t i = 1; i < streams.size(); ++i) total = add(total, streams[i]);
  return scale(total, 1.0 / static_cast<double>(streams.size()));
}

ContinualModel::ContinualModel(Backbone backbone, GateMode mode)
    : backbone_(std::move(backbone)), mode_(mode) {
  backbone_.set_frozen(true);
}

std::size_t ContinualModel::add_domain(std::size_t num_classes, std::size_t rank, double alpha,
                                       std::uint64_t seed) {
  if (num_classes == 0) throw Error("add_domain: a domain needs at least one class");
  backbone_.set_frozen(true);
  for (auto& d : domains_) d.set_frozen(true);

  const auto& cfg = backbone_.config();
  const std::size_t d = cfg.embed_dim;
  const std::size_t id = domains_.size();
  const std::string root = "domain" + std::to_string(id) + ".";
  Rng rng(seed);
  DomainAdapterSet set;
  set.domain_id = id;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string prefix = root + "block" + std::to_string(b) + ".";
    BlockAdapters blk;
    blk.q = LoraAdapter::create(prefix + "q.", d, d, rank, alpha, rng);
    blk.k = LoraAdapter::create(prefix + "k.", d, d, rank, alpha, rng);
    blk.v = LoraAdapter::create(prefix + "v.", d, d, rank, alpha, rng);
    if (mode_ == GateMode::learned) {
      // The first domain has nothing to gate; its gate is kept for uniform
      // accounting but never trains.
      blk.gate = GateUnit{Parameter(prefix + "gate.W_g", Tensor({d, d}, 0.0), id == 0)};
    }
    set.blocks.push_back(std::move(blk));
  }
  set.head = DomainHead::create(root + "head.", d, num_classes, rng);
  domains_.push_back(std::move(set));
  return id;
}

const DomainAdapterSet& ContinualModel::domain(std::size_t id) const {
  if (id >= domains_.size()) throw Error("unknown domain id " + std::to_string(id));
  return domains_[id];
}

DomainAdapterSet& ContinualModel::domain(std::size_t id) {
  if (id >= domains_.size()) throw Error("unknown domain id " + std::to_string(id));
  return domains_[id];
}

std::vector<StreamQKV> ContinualModel::gated_qkv(std::span<const Tensor> normed_streams,
                                                 std::size_t block_id) const {
  const std::size_t count = normed_streams.size();
  if (count == 0 || count > domains_.size()) {
    throw Error("gated_qkv: " + std::to_string(count) + " streams for " +
                std::to_string(domains_.size()) + " registered domains");
  }
  const BlockWeights& w = backbone_.block(block_id);
  std::vector<StreamQKV> own(count);
  for (std::size_t i = 0; i < count; ++i) {
    const BlockAdapters& ad = domains_[i].blocks.at(block_id);
    own[i].q = lora_project(normed_streams[i], w.w_q, ad.q);
    own[i].k = lora_project(normed_streams[i], w.w_k, ad.k);
    own[i].v = lora_project(normed_streams[i], w.w_v, ad.v);
  }
  std::vector<StreamQKV> out(count);
  for (std::size_t j = 0; j < count; ++j) {
    if (j == 0) {
      out[j] = own[j];
      continue;
    }
    const BlockAdapters& ad = domains_[j].blocks.at(block_id);
    auto prior = [&](const Tensor& p) {
      return mode_ == GateMode::learned ? gate_apply(p, *ad.gate) : p;
    };
    Tensor q = prior(own[0].q), k = prior(own[0].k), v = prior(own[0].v);
    for (std::size_t i = 1; i < j; ++i) {
      q = add(q, prior(own[i].q));
      k = add(k, prior(own[i].k));
      v = add(v, prior(own[i].v));
    }
    out[j] = {add(q, own[j].q), add(k, own[j].k), add(v, own[j].v)};
  }
  return out;
}

std::vector<Tensor> ContinualModel::multi_block_forward(std::span<const Tensor> streams,
                                                        std::size_t block_id,
                                                        std::size_t seq_len) const {
  const BlockWeights& w = backbone_.block(block_id);
  const std::size_t count = streams.size();
  std::vector<Tensor> normed(count);
  for (std::size_t j = 0; j < count; ++j) normed[j] = layer_norm(streams[j], w.ln1);
  const auto qkv = gated_qkv(normed, block_id);

  std::vector<Tensor> attended(count);
  for (std::size_t j = 0; j < count; ++j) {
    Tensor a = attention(qkv[j].q, qkv[j].k, qkv[j].v, seq_len, config().num_heads);
    attended[j] = add(streams[j], matmul(a, w.w_o.value()));
  }
  // Stack along the domain axis, shared MLP, partition back.
  const std::size_t rows = streams.front().rows();
  Tensor stacked = count == 1 ? attended.front() : concat_rows(attended);
  Tensor mixed = add(stacked, mlp_forward(layer_norm(stacked, w.ln2), w));
  if (count == 1) return {mixed};
  std::vector<Tensor> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = slice_rows(mixed, j * rows, rows);
  return out;
}

std::vector<Tensor> ContinualModel::stream_features(const Tensor& images,
                                                    std::optional<std::size_t> count) const {
  const std::size_t n = count.value_or(domains_.size());
  if (n == 0 || n > domains_.size()) {
    throw Error("stream_features: requested " + std::to_string(n) + " streams with " +
                std::to_string(domains_.size()) + " registered domains");
  }
  const std::size_t seq = config().num_tokens();
  const Tensor tokens = backbone_.patch_embed(images);
  std::vector<Tensor> streams(n, tokens);
  for (std::size_t b = 0; b < config().depth; ++b) streams = multi_block_forward(streams, b, seq);
  std::vector<Tensor> features(n);
  for (std::size_t j = 0; j < n; ++j) features[j] = backbone_.class_features(streams[j], seq);
  return features;
}

Tensor ContinualModel::head_forward(const Tensor& features, std::size_t domain_id) const {
  return cladapt::head_forward(features, domain(domain_id).head);
}

std::vector<Parameter*> ContinualModel::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  for (auto& d : domains_)
    for (Parameter* p : d.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> ContinualModel::parameters() const {
  std::vector<const Parameter*> out = backbone_.parameters();
  for (const auto& d : domains_)
    for (const Parameter* p : d.parameters()) out.push_back(p);
  return out;
}

ParamReport ContinualModel::param_report() const {
  ParamReport report;
  report.backbone = backbone_.parameter_count();
  for (const auto& d : domains_) report.per_domain.push_back(d.numel());
  tally(report, parameters());
  return report;
}

}  // namespace cladapt
