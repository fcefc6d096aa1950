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
#include <utility>

#include "cladapt/baselines.hpp"
#include "cladapt/checkpoint.hpp"
#include "cladapt/training.hpp"
#include "support.hpp"

using namespace cladapt;
using cladapt::testing::random_tensor;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Parameter& find(Learner& learner, const std::string& name) {
  for (Parameter* p : learner.parameters())
    if (p->name() == name) return *p;
  throw Error("no parameter " + name);
}

void fill_random(Parameter& p, Rng& rng, double scale) {
  const Tensor r = random_tensor(p.value().shape(), rng, scale);
  std::copy(r.data().begin(), r.data().end(), p.value().mutable_data().begin());
}

std::string bytes_of(const Learner& learner, std::initializer_list<std::string> prefixes) {
  const std::vector<std::string> list(prefixes);
  return checkpoint_bytes(learner.parameters(), list);
}

Backbone tiny_backbone() {
  Backbone b(BackboneConfig::tiny(), 17);
  b.set_frozen(true);
  return b;
}

DomainSplit toy_domain(std::uint64_t seed, DomainKind kind = DomainKind::generic) {
  return generate_domain({kind, 3, 10, 16, 1, 0.1, seed});
}

TrainConfig short_training() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr0 = 0.05;
  cfg.lr_min = 0.01;
  cfg.batch_size = 8;
  return cfg;
}

}  // namespace

TEST_CASE("an empty prefix reproduces the base model") {
  const Backbone backbone = tiny_backbone();
  PrefixModel model(backbone, 0, 3);
  model.begin_domain(4);
  Rng rng(1);
  const Tensor images = random_tensor({3, 1, 16, 16}, rng);
  CHECK(max_abs_diff(model.features(images, FeatureSelector::of(0)), backbone.forward(images)) == 0.0);
  CHECK(model.sequence_length() == 5);
}

TEST_CASE("one prefix row over two tokens gives a sequence of three") {
  BackboneConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 8;
  cfg.embed_dim = 3;
  cfg.num_heads = 1;
  cfg.depth = 1;
  PrefixModel model(Backbone(cfg, 2), 1, 3);
  model.begin_domain(2);
  CHECK(cfg.num_tokens() == 2);
  CHECK(model.sequence_length() == 3);
  CHECK(model.prefix(0).value().shape() == Shape{1, 3});
  Rng rng(2);
  CHECK(model.prefix_forward(random_tensor({4, 1, 8, 8}, rng), 0).shape() == Shape{4, 3});
  CHECK_THROWS_AS(model.prefix_forward(random_tensor({4, 1, 8, 8}, rng), 1), Error);
}

TEST_CASE("prefix training leaves earlier prefixes and the trunk untouched") {
  PrefixModel model(tiny_backbone(), 8, 4);
  const auto d0 = toy_domain(1), d1 = toy_domain(2, DomainKind::texture);
  model.begin_domain(3);
  train_domain(model, 0, d0, short_training());
  const std::string before = bytes_of(model, {"backbone.", "prefix.domain0."});
  CHECK(before.size() > bytes_of(model, {"backbone."}).size() + 8 * 32 * 8);
  model.begin_domain(3);
  CHECK(!model.prefix(1).frozen());
  CHECK(model.prefix(0).frozen());
  train_domain(model, 1, d1, short_training());
  CHECK(bytes_of(model, {"backbone.", "prefix.domain0."}) == before);
  // The merged view reads the newest prefix.
  Rng rng(3);
  const Tensor images = random_tensor({2, 1, 16, 16}, rng);
  CHECK(max_abs_diff(model.features(images, FeatureSelector::merged_view()), model.prefix_forward(images, 1)) == 0.0);
}

TEST_CASE("block expansion preserves the output exactly at insertion") {
  BlockExpansionModel model(tiny_backbone(), 5);
  Rng rng(4);
  const Tensor images = random_tensor({3, 1, 16, 16}, rng);
  const Tensor base = model.forward(images);
  for (std::size_t j = 0; j < 3; ++j) {
    const Tensor before = model.forward(images);
    model.begin_domain(4);
    CHECK(max_abs_diff(model.forward(images), before) == 0.0);
    // Make the new block non-trivial so the next insertion copies real weights.
    fill_random(find(model, "expand.domain" + std::to_string(j) + ".block.w_o"), rng, 0.2);
    fill_random(find(model, "expand.domain" + std::to_string(j) + ".block.mlp_w2"), rng, 0.2);
  }
  CHECK(max_abs_diff(model.forward(images), base) > 0.0);
}

TEST_CASE("three domains append three blocks in order and grow by one block each") {
  const Backbone backbone = tiny_backbone();
  BlockExpansionModel model(backbone, 5);
  std::vector<std::size_t> totals{model.param_report().total()};
  for (int j = 0; j < 3; ++j) {
    model.begin_domain(4);
    totals.push_back(model.param_report().total());
  }
  CHECK(model.total_blocks() == 7);
  REQUIRE(model.expansions().size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(model.expansions()[j].w_q.name() == "expand.domain" + std::to_string(j) + ".block.w_q");
    CHECK(model.expansions()[j].w_q.frozen() == (j < 2));
  }
  std::size_t block = 0;
  for (const Parameter* p : backbone.block(0).parameters()) block += p->numel();
  const std::size_t head = 32 * 4 + 4;
  for (std::size_t j = 1; j < totals.size(); ++j) CHECK(totals[j] - totals[j - 1] == block + head);
}

TEST_CASE("sequential LoRA with zero B is the base model") {
  const Backbone backbone = tiny_backbone();
  SequentialLoraModel model(backbone, 16, 64.0, 6);
  Rng rng(5);
  const Tensor images = random_tensor({3, 1, 16, 16}, rng);
  for (int j = 0; j < 3; ++j) {
    model.begin_domain(4);
    CHECK(max_abs_diff(model.forward(images), backbone.forward(images)) == 0.0);
  }
}

TEST_CASE("sequential LoRA with one domain is lora_project") {
  const Backbone backbone = tiny_backbone();
  SequentialLoraModel model(backbone, 4, 8.0, 6);
  model.begin_domain(4);
  Rng rng(6);
  auto& upd = model.update(0, 2);
  for (LoraAdapter* a : {&upd.q, &upd.k, &upd.v}) fill_random(a->b, rng, 0.3);
  const Tensor x = random_tensor({5, 32}, rng);
  CHECK(max_abs_diff(model.project(x, 2, Projection::q), lora_project(x, backbone.block(2).w_q, upd.q)) == 0.0);
  CHECK(max_abs_diff(model.project(x, 2, Projection::v), lora_project(x, backbone.block(2).w_v, upd.v)) == 0.0);
}

TEST_CASE("sequential LoRA is deterministic and interferes with earlier domains") {
  auto run = [] {
    SequentialLoraModel model(tiny_backbone(), 16, 64.0, 7);
    model.begin_domain(3);
    train_domain(model, 0, toy_domain(1), short_training());
    Rng rng(7);
    const Tensor images = random_tensor({4, 1, 16, 16}, rng);
    const Tensor before = model.features(images, FeatureSelector::of(0));
    const std::string frozen = bytes_of(model, {"backbone.", "seqlora.domain0."});
    model.begin_domain(3);
    train_domain(model, 1, toy_domain(2, DomainKind::texture), short_training());
    CHECK(bytes_of(model, {"backbone.", "seqlora.domain0."}) == frozen);
    const Tensor after = model.features(images, FeatureSelector::of(0));
    return std::pair{max_abs_diff(before, after), after};
  };
  const auto [drift, first] = run();
  const auto [drift2, second] = run();
  CHECK(drift > 0.0);
  CHECK(max_abs_diff(first, second) == 0.0);
}

TEST_CASE("full fine-tuning: zero learning rate changes nothing") {
  FullFinetuneModel model(tiny_backbone(), 8);
  model.begin_domain(3);
  CHECK(!model.backbone().all_frozen());
  const auto data = toy_domain(4);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor images = data.train.images(idx);
  const auto labels = data.train.labels_of(idx);
  const std::string before = bytes_of(model, {""});
  full_finetune_step(model, images, labels, 0, 0.0);
  CHECK(bytes_of(model, {""}) == before);
  full_finetune_step(model, images, labels, 0, 0.05);
  CHECK(bytes_of(model, {""}) != before);
}

TEST_CASE("full fine-tuning freezes earlier heads but keeps the backbone trainable") {
  FullFinetuneModel model(tiny_backbone(), 8);
  model.begin_domain(3);
  model.begin_domain(5);
  CHECK(model.head(0).weight.frozen());
  CHECK(!model.head(1).weight.frozen());
  CHECK(!model.backbone().all_frozen());
  const auto report = model.param_report();
  CHECK(report.trainable == model.backbone().parameter_count() + model.head(1).numel());
}

TEST_CASE("every method starts from the frozen backbone's features") {
  const Backbone backbone = tiny_backbone();
  Rng rng(9);
  const Tensor images = random_tensor({3, 1, 16, 16}, rng);
  const Tensor base = backbone.forward(images);
  LearnerOptions options;
  options.prefix_len = 0;
  for (Method m : all_methods()) {
    auto learner = make_learner(m, backbone, options);
    learner->begin_domain(4);
    CAPTURE(to_string(m));
    CHECK(max_abs_diff(learner->features(images, FeatureSelector::of(0)), base) <= 1e-12);
    CHECK(learner->head(0).num_classes == 4);
    CHECK(learner->logits(images, 0).shape() == Shape{3, 4});
  }
}
