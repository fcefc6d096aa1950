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
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cladapt/backbone.hpp"
#include "cladapt/evaluation.hpp"
#include "support.hpp"

using namespace cladapt;
using cladapt::testing::gradient_error;
using cladapt::testing::probe_loss;
using cladapt::testing::random_tensor;
using cladapt::testing::with_grad;

namespace {

Parameter& find(Backbone& backbone, const std::string& name) {
  for (Parameter* p : backbone.parameters())
    if (p->name() == name) return *p;
  throw Error("no parameter " + name);
}

BackboneConfig two_dim() {
  BackboneConfig cfg;
  cfg.embed_dim = 2;
  cfg.num_heads = 1;
  cfg.mlp_ratio = 2;
  return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

DomainSplit small_generic(std::uint64_t seed) {
  return generate_domain({DomainKind::generic, 8, 40, 16, 1, 0.1, seed}, "generic");
}

}  // namespace

TEST_CASE("presets and validation") {
  CHECK(BackboneConfig::tiny().embed_dim == 32);
  CHECK(BackboneConfig::tiny().depth == 4);
  CHECK(BackboneConfig::base().embed_dim == 64);
  CHECK(BackboneConfig::base().depth == 8);
  CHECK(BackboneConfig::base().num_heads == 8);
  BackboneConfig bad;
  bad.patch_size = 5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = BackboneConfig{};
  bad.num_heads = 5;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(parse_size_tag("huge"), Error);
}

TEST_CASE("a 16×16 image with patch 8 gives 5 tokens") {
  const Backbone backbone(BackboneConfig::tiny(), 1);
  Rng rng(2);
  const Tensor tokens = backbone.patch_embed(random_tensor({1, 16, 16}, rng));
  CHECK(tokens.shape() == Shape{5, 32});
  CHECK(backbone.patch_embed(random_tensor({3, 1, 16, 16}, rng)).shape() == Shape{15, 32});
  CHECK_THROWS_AS(backbone.patch_embed(Tensor({1, 12, 12})), DimensionError);
}

TEST_CASE("zero image with zero projection gives the positional offsets") {
  Backbone backbone(BackboneConfig::tiny(), 3);
  find(backbone, "backbone.patch_proj").value() = Tensor({64, 32});
  const Tensor tokens = backbone.patch_embed(Tensor({1, 16, 16}));
  const Tensor& pos = find(backbone, "backbone.pos_embed").value();
  const Tensor& cls = find(backbone, "backbone.cls_token").value();
  for (std::size_t c = 0; c < 32; ++c) {
    CHECK(tokens(0, c) == cls(0, c) + pos(0, c));
    for (std::size_t t = 1; t < 5; ++t) CHECK(tokens(t, c) == pos(t, c));
  }
}

TEST_CASE("two distinct images give different tokens of the same shape") {
  const Backbone backbone(BackboneConfig::tiny(), 3);
  Rng rng(5);
  const Tensor a = backbone.patch_embed(random_tensor({1, 16, 16}, rng));
  const Tensor b = backbone.patch_embed(random_tensor({1, 16, 16}, rng));
  CHECK(a.shape() == b.shape());
  CHECK(max_abs_diff(a, b) > 0.0);
}

TEST_CASE("attention over one token returns V·W_o") {
  const auto cfg = BackboneConfig::tiny();
  Rng rng(6);
  const BlockWeights w = init_block(cfg, rng, "b.");
  const Tensor x = random_tensor({1, 32}, rng);
  const Tensor expected = matmul(matmul(x, w.w_v.value()), w.w_o.value());
  CHECK(max_abs_diff(base_attention(x, w, 1, cfg.num_heads), expected) < 1e-14);
}

TEST_CASE("hand-computed two-token attention") {
  const auto cfg = two_dim();
  Rng rng(7);
  BlockWeights w = init_block(cfg, rng, "b.");
  w.w_q.value() = Tensor::matrix({{1, 0}, {0, 1}});
  w.w_k.value() = Tensor::matrix({{1, 0}, {0, 1}});
  w.w_v.value() = Tensor::matrix({{1, 2}, {3, 4}});
  w.w_o.value() = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor x = Tensor::matrix({{1, 0}, {0, 1}});
  // Scores are I/√2, so each token puts e^s/(e^s+1) on itself.
  const double s = 1.0 / std::sqrt(2.0);
  const double self = std::exp(s) / (std::exp(s) + 1.0), other = 1.0 - self;
  const Tensor out = base_attention(x, w, 2, 1);
  CHECK(out(0, 0) == doctest::Approx(self * 1 + other * 3).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(self * 2 + other * 4).epsilon(1e-14));
  CHECK(out(1, 0) == doctest::Approx(other * 1 + self * 3).epsilon(1e-14));
  CHECK(out(1, 1) == doctest::Approx(other * 2 + self * 4).epsilon(1e-14));
}

TEST_CASE("zeroed output projections make a block the identity") {
  const auto cfg = BackboneConfig::tiny();
  Rng rng(8);
  BlockWeights w = init_block(cfg, rng, "b.");
  w.w_o.value() = Tensor({32, 32});
  w.mlp_w2.value() = Tensor({128, 32});
  const Tensor x = random_tensor({10, 32}, rng);
  CHECK(max_abs_diff(block_forward(x, w, 5, cfg.num_heads), x) == 0.0);
}

TEST_CASE("blocks preserve shape and compose into the trunk") {
  const Backbone backbone(BackboneConfig::tiny(), 9);
  Rng rng(10);
  const Tensor tokens = random_tensor({15, 32}, rng);
  Tensor x = tokens;
  for (const auto& b : backbone.blocks()) {
    x = block_forward(x, b, 5, 4);
    CHECK(x.shape() == tokens.shape());
  }
  CHECK(max_abs_diff(x, backbone.trunk(tokens, 5)) == 0.0);
}

TEST_CASE("gradients through one block match central differences") {
  auto cfg = BackboneConfig::tiny();
  cfg.embed_dim = 8;
  cfg.num_heads = 2;
  Rng rng(11);
  BlockWeights w = init_block(cfg, rng, "b.");
  const Tensor x = with_grad(random_tensor({6, 8}, rng));
  const Tensor probe = random_tensor({6, 8}, rng);
  std::vector<Tensor> inputs{x};
  for (Parameter* p : w.parameters()) inputs.push_back(p->value());
  const double err = gradient_error([&] { return probe_loss(block_forward(x, w, 3, 2), probe); }, inputs);
  MESSAGE("block gradient relative error " << err);
  CHECK(err < 1e-6);
}

TEST_CASE("surrogate pretraining is deterministic, freezes everything and beats chance") {
  PretrainOptions options;
  options.epochs = 4;
  const auto data = small_generic(99);
  const auto a = pretrain_surrogate(BackboneConfig::tiny(), data, 5, options);
  const auto b = pretrain_surrogate(BackboneConfig::tiny(), data, 5, options);
  const auto pa = a.backbone.parameters(), pb = b.backbone.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->frozen());
    const auto da = pa[i]->value().data(), db = pb[i]->value().data();
    CHECK(std::equal(da.begin(), da.end(), db.begin(), db.end()));
  }
  CHECK(a.backbone.all_frozen());
  CHECK(a.epoch_loss.size() == 4);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());

  // KNN on a fresh generic domain with unseen prototypes.
  const auto target = generate_domain({DomainKind::generic, 6, 40, 16, 1, 0.1, 123}, "target");
  auto bank_of = [&](const DomainDataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return FeatureBank{a.backbone.forward(ds.images(idx)), ds.labels, 0};
  };
  const double acc = knn_accuracy(bank_of(target.train), bank_of(target.val), 10);
  MESSAGE("pretrained KNN accuracy on an unseen generic domain: " << acc);
  CHECK(acc > 0.5);  // chance is 1/6
}
