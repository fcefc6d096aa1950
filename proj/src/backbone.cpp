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
#include "cladapt/backbone.hpp"

#include <cmath>

#include "cladapt/init.hpp"

namespace cladapt {

std::string to_string(SizeTag tag) { return tag == SizeTag::tiny ? "tiny" : "base"; }

SizeTag parse_size_tag(std::string_view name) {
  if (name == "tiny") return SizeTag::tiny;
  if (name == "base") return SizeTag::base;
  throw Error("unknown model size '" + std::string(name) + "'");
}

BackboneConfig BackboneConfig::tiny() { return {}; }

BackboneConfig BackboneConfig::base() {
  BackboneConfig cfg;
  cfg.embed_dim = 64;
  cfg.depth = 8;
  cfg.num_heads = 8;
  cfg.size_tag = SizeTag::base;
  return cfg;
}

BackboneConfig BackboneConfig::preset(SizeTag tag) { return tag == SizeTag::tiny ? tiny() : base(); }

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw Error("backbone config: image_size " + std::to_string(image_size) +
                " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw Error("backbone config: embed_dim " + std::to_string(embed_dim) +
                " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (depth == 0 || channels == 0 || mlp_ratio == 0) throw Error("backbone config: zero extent");
}

std::size_t BackboneConfig::num_patches() const {
  const std::size_t side = image_size / patch_size;
  return side * side;
}

std::vector<Parameter*> BlockWeights::parameters() {
  return {&w_q, &w_k, &w_v, &w_o, &ln1.gamma, &ln1.beta, &ln2.gamma, &ln2.beta, &mlp_w1, &mlp_w2};
}

std::vector<const Parameter*> BlockWeights::parameters() const {
  return {&w_q, &w_k, &w_v, &w_o, &ln1.gamma, &ln1.beta, &ln2.gamma, &ln2.beta, &mlp_w1, &mlp_w2};
}

void BlockWeights::set_frozen(bool frozen) {
  for (Parameter* p : parameters()) p->set_frozen(frozen);
}

void BlockWeights::rename(const std::string& prefix) {
  w_q.set_name(prefix + "w_q");
  w_k.set_name(prefix + "w_k");
  w_v.set_name(prefix + "w_v");
  w_o.set_name(prefix + "w_o");
  ln1.gamma.set_name(prefix + "ln1.gamma");
  ln1.beta.set_name(prefix + "ln1.beta");
  ln2.gamma.set_name(prefix + "ln2.gamma");
  ln2.beta.set_name(prefix + "ln2.beta");
  mlp_w1.set_name(prefix + "mlp_w1");
  mlp_w2.set_name(prefix + "mlp_w2");
}

namespace {

LayerNormWeights init_norm(std::size_t d, const std::string& prefix) {
  return {Parameter(prefix + "gamma", Tensor({d}, 1.0)), Parameter(prefix + "beta", Tensor({d}, 0.0))};
}

}  // namespace

BlockWeights init_block(const BackboneConfig& cfg, Rng& rng, const std::string& prefix) {
  const std::size_t d = cfg.embed_dim, h = cfg.hidden_dim();
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  BlockWeights w;
  w.w_q = gaussian_parameter(prefix + "w_q", {d, d}, proj_std, rng);
  w.w_k = gaussian_parameter(prefix + "w_k", {d, d}, proj_std, rng);
  w.w_v = gaussian_parameter(prefix + "w_v", {d, d}, proj_std, rng);
  w.w_o = gaussian_parameter(prefix + "w_o", {d, d}, proj_std, rng);
  w.ln1 = init_norm(d, prefix + "ln1.");
  w.ln2 = init_norm(d, prefix + "ln2.");
  w.mlp_w1 = gaussian_parameter(prefix + "mlp_w1", {d, h}, proj_std, rng);
  w.mlp_w2 = gaussian_parameter(prefix + "mlp_w2", {h, d}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  return w;
}

Tensor layer_norm(const Tensor& x, const LayerNormWeights& w) {
  return layer_norm(x, w.gamma.value(), w.beta.value(), kLayerNormEps);
}

Tensor base_attention(const Tensor& x, const BlockWeights& w, std::size_t seq_len,
                      std::size_t num_heads) {
  Tensor q = matmul(x, w.w_q.value());
  Tensor k = matmul(x, w.w_k.value());
  Tensor v = matmul(x, w.w_v.value());
  return matmul(attention(q, k, v, seq_len, num_heads), w.w_o.value());
}

Tensor mlp_forward(const Tensor& x, const BlockWeights& w) {
  return matmul(gelu(matmul(x, w.mlp_w1.value())), w.mlp_w2.value());
}

Tensor block_forward(const Tensor& x, const BlockWeights& w, std::size_t seq_len,
                     std::size_t num_heads) {
  Tensor h = add(x, base_attention(layer_norm(x, w.ln1), w, seq_len, num_heads));
  return add(h, mlp_forward(layer_norm(h, w.ln2), w));
}

Tensor block_forward_projected(const Tensor& x, const BlockWeights& w, std::size_t seq_len,
                               std::size_t num_heads, const ProjectionFn& project) {
  Tensor normed = layer_norm(x, w.ln1);
  Tensor a = attention(project(normed, Projection::q), project(normed, Projection::k),
                       project(normed, Projection::v), seq_len, num_heads);
  Tensor h = add(x, matmul(a, w.w_o.value()));
  return add(h, mlp_forward(layer_norm(h, w.ln2), w));
}

std::vector<std::size_t> token_rows(std::size_t batch, std::size_t seq_len, std::size_t offset) {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * seq_len + offset;
  return rows;
}

Backbone::Backbone(BackboneConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.embed_dim;
  patch_proj_ = gaussian_parameter("backbone.patch_proj", {config_.patch_dim(), d},
                                   1.0 / std::sqrt(static_cast<double>(config_.patch_dim())), rng);
  cls_token_ = gaussian_parameter("backbone.cls_token", {1, d}, 0.02, rng);
  pos_embed_ = gaussian_parameter("backbone.pos_embed", {config_.num_tokens(), d}, 0.02, rng);
  for (std::size_t b = 0; b < config_.depth; ++b) {
    blocks_.push_back(init_block(config_, rng, "backbone.block" + std::to_string(b) + "."));
  }
  norm_ = init_norm(d, "backbone.norm.");
}

Tensor Backbone::patch_embed(const Tensor& images) const {
  const auto& s = images.shape();
  const bool single = s.size() == 3;
  if (s.size() != 3 && s.size() != 4) {
    throw DimensionError("patch_embed: expected [C×H×W] or [B×C×H×W], got " + shape_to_string(s));
  }
  const std::size_t batch = single ? 1 : s[0];
  const std::size_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
  if (c != config_.channels || h != config_.image_size || w != config_.image_size) {
    throw DimensionError("patch_embed: image " + shape_to_string(s) + " does not match the " +
                         std::to_string(config_.channels) + "x" + std::to_string(config_.image_size) +
                         "x" + std::to_string(config_.image_size) + " configuration");
  }
  const std::size_t p = config_.patch_size, side = h / p, np = side * side, pd = config_.patch_dim();
  std::vector<double> patches(batch * np * pd);
  auto px = images.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t pxi = 0; pxi < side; ++pxi) {
        double* row = patches.data() + ((b * np) + py * side + pxi) * pd;
        std::size_t col = 0;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
              row[col++] = px[((b * c + ch) * h + py * p + dy) * w + pxi * p + dx];
      }
  Tensor projected = matmul(Tensor({batch * np, pd}, std::move(patches)), patch_proj_.value());

  const std::size_t n = np + 1;
  std::vector<std::size_t> order(batch * n), pos_rows(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    order[b * n] = 0;
    for (std::size_t t = 0; t < np; ++t) order[b * n + 1 + t] = 1 + b * np + t;
    for (std::size_t t = 0; t < n; ++t) pos_rows[b * n + t] = t;
  }
  const Tensor parts[] = {cls_token_.value(), projected};
  Tensor tokens = gather_rows(concat_rows(parts), order);
  return add(tokens, gather_rows(pos_embed_.value(), pos_rows));
}

Tensor Backbone::trunk(const Tensor& tokens, std::size_t seq_len) const {
  Tensor x = tokens;
  for (const auto& block : blocks_) x = block_forward(x, block, seq_len, config_.num_heads);
  return x;
}

Tensor Backbone::class_features(const Tensor& tokens, std::size_t seq_len,
                                std::size_t cls_offset) const {
  const auto rows = token_rows(tokens.rows() / seq_len, seq_len, cls_offset);
  return layer_norm(gather_rows(tokens, rows), norm_);
}

Tensor Backbone::forward(const Tensor& images) const {
  const std::size_t n = config_.num_tokens();
  return class_features(trunk(patch_embed(images), n), n);
}

std::vector<Parameter*> Backbone::parameters() {
  std::vector<Parameter*> out{&patch_proj_, &cls_token_, &pos_embed_};
  for (auto& b : blocks_)
    for (Parameter* p : b.parameters()) out.push_back(p);
  out.push_back(&norm_.gamma);
  out.push_back(&norm_.beta);
  return out;
}

std::vector<const Parameter*> Backbone::parameters() const {
  std::vector<const Parameter*> out{&patch_proj_, &cls_token_, &pos_embed_};
  for (const auto& b : blocks_)
    for (const Parameter* p : b.parameters()) out.push_back(p);
  out.push_back(&norm_.gamma);
  out.push_back(&norm_.beta);
  return out;
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->numel();
  return n;
}

void Backbone::set_frozen(bool frozen) {
  for (Parameter* p : parameters()) p->set_frozen(frozen);
}

bool Backbone::all_frozen() const {
  for (const Parameter* p : parameters())
    if (!p->frozen()) return false;
  return true;
}

PretrainResult pretrain_surrogate(const BackboneConfig& config, const DomainSplit& generic,
                                  std::uint64_t seed, const PretrainOptions& options) {
  const DomainDataset& train = generic.train;
  if (train.size() == 0) throw Error("pretrain_surrogate: empty generic domain");
  PretrainResult result{Backbone(config, mix_seed(seed, 1)), {}};
  Backbone& backbone = result.backbone;
  Rng head_rng(mix_seed(seed, 2));
  const std::size_t d = config.embed_dim;
  Parameter head_w = gaussian_parameter("pretrain.head.w", {d, train.num_classes}, 0.02, head_rng);
  Parameter head_b("pretrain.head.b", Tensor({train.num_classes}, 0.0));

  std::vector<Parameter*> params = backbone.parameters();
  params.push_back(&head_w);
  params.push_back(&head_b);

  TrainConfig schedule;
  schedule.lr0 = options.lr0;
  schedule.lr_min = options.lr_min;
  schedule.epochs = options.epochs;
  schedule.validate();

  Tape tape;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, options.epochs, schedule);
    const auto order = epoch_order(train.size(), mix_seed(seed, 3), epoch);
    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, count);
      tape.clear();
      TapeScope scope(tape);
      Tensor logits = add_row(matmul(backbone.forward(train.images(idx)), head_w.value()),
                              head_b.value());
      Tensor loss = cross_entropy(logits, train.labels_of(idx));
      tape.backward(loss);
      sgd_step(params, lr);
      loss_total += loss.item();
      ++batches;
    }
    result.epoch_loss.push_back(loss_total / static_cast<double>(batches));
  }
  tape.clear();
  backbone.set_frozen(true);
  return result;
}

}  // namespace cladapt
