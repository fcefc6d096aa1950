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

#include "cladapt/adapters.hpp"
#include "cladapt/checkpoint.hpp"
#include "support.hpp"

using namespace cladapt;
using cladapt::testing::gradient_error;
using cladapt::testing::probe_loss;
using cladapt::testing::random_tensor;
using cladapt::testing::with_grad;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double sigma(double z) { return 1.0 / (1.0 + std::exp(-z)); }

BackboneConfig small_config(std::size_t d, std::size_t heads, std::size_t depth) {
  BackboneConfig cfg;
  cfg.embed_dim = d;
  cfg.num_heads = heads;
  cfg.depth = depth;
  cfg.mlp_ratio = 2;
  return cfg;
}

// Overwrites in place so the parameter keeps its gradient tracking.
void fill_random(Parameter& p, Rng& rng, double scale) {
  const Tensor r = random_tensor(p.value().shape(), rng, scale);
  std::copy(r.data().begin(), r.data().end(), p.value().mutable_data().begin());
}

// Gives every adapter of `domain` random B and W_g so nothing is at its
// zero initialization.
void perturb(ContinualModel& model, std::size_t domain, Rng& rng) {
  for (auto& blk : model.domain(domain).blocks) {
    for (LoraAdapter* a : {&blk.q, &blk.k, &blk.v}) fill_random(a->b, rng, 0.3);
    if (blk.gate) fill_random(blk.gate->w_g, rng, 0.5);
  }
}

}  // namespace

TEST_CASE("lora_project hand example") {
  Rng rng(1);
  auto adapter = LoraAdapter::create("t.", 2, 2, 1, 1.0, rng);
  adapter.a.value() = Tensor::matrix({{1}, {0}});
  adapter.b.value() = Tensor::matrix({{0, 1}});
  const Parameter w0("w0", Tensor::matrix({{1, 0}, {0, 1}}));
  // x·W0 + (x·A)·B = [1,1] + [1]·[0,1]
  const Tensor out = lora_project(Tensor::matrix({{1, 1}}), w0, adapter);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 2.0);
}

TEST_CASE("B = 0 gives the base projection exactly") {
  Rng rng(2);
  const auto adapter = LoraAdapter::create("t.", 8, 6, 4, 64.0, rng);
  const Parameter w0("w0", random_tensor({8, 6}, rng));
  const Tensor x = random_tensor({5, 8}, rng);
  CHECK(max_abs_diff(lora_project(x, w0, adapter), matmul(x, w0.value())) == 0.0);
  CHECK(adapter.a.value().shape() == Shape{8, 4});
  CHECK(adapter.b.value().shape() == Shape{4, 6});
}

TEST_CASE("doubling alpha doubles the update") {
  Rng rng(3);
  auto adapter = LoraAdapter::create("t.", 8, 8, 4, 8.0, rng);
  adapter.b.value() = random_tensor({4, 8}, rng);
  const Parameter w0("w0", random_tensor({8, 8}, rng));
  const Tensor x = random_tensor({3, 8}, rng);
  const Tensor base = matmul(x, w0.value());
  const Tensor once = sub(lora_project(x, w0, adapter), base);
  adapter.alpha *= 2.0;
  const Tensor twice = sub(lora_project(x, w0, adapter), base);
  CHECK(max_abs_diff(twice, scale(once, 2.0)) < 1e-12);
}

TEST_CASE("lora_project rejects mismatched shapes") {
  Rng rng(4);
  const auto adapter = LoraAdapter::create("t.", 8, 8, 4, 8.0, rng);
  const Parameter w0("w0", random_tensor({8, 8}, rng));
  CHECK_THROWS_AS(lora_project(random_tensor({3, 7}, rng), w0, adapter), DimensionError);
}

TEST_CASE("gate examples") {
  Rng rng(5);
  const Tensor prev = random_tensor({4, 6}, rng);
  GateUnit zero{Parameter("g", Tensor({6, 6}))};
  CHECK(max_abs_diff(gate_apply(prev, zero), scale(prev, 0.5)) == 0.0);

  GateUnit shut{Parameter("g", scale(Tensor::matrix({{1, 0}, {0, 1}}), -1e9))};
  const Tensor out = gate_apply(Tensor::matrix({{1, 2}}), shut);
  CHECK(std::abs(out(0, 0)) < 1e-300);
  CHECK(std::abs(out(0, 1)) < 1e-300);

  GateUnit random{Parameter("g", random_tensor({6, 6}, rng, 2.0))};
  const Tensor gated = gate_apply(prev, random);
  for (std::size_t i = 0; i < prev.numel(); ++i) {
    CHECK(std::abs(gated.data()[i]) <= std::abs(prev.data()[i]));
    if (prev.data()[i] != 0.0) CHECK(std::abs(gated.data()[i]) > 0.0);
  }
}

TEST_CASE("a single domain is plain lora_project") {
  Rng rng(6);
  ContinualModel model(Backbone(small_config(8, 2, 2), 1));
  model.add_domain(3, 4, 8.0, 7);
  perturb(model, 0, rng);
  const Tensor x = random_tensor({3, 8}, rng);
  const Tensor streams[] = {x};
  const auto qkv = model.gated_qkv(streams, 1);
  REQUIRE(qkv.size() == 1);
  const auto& w = model.backbone().block(1);
  const auto& adapters = model.domain(0).blocks[1];
  CHECK(max_abs_diff(qkv[0].q, lora_project(x, w.w_q, adapters.q)) == 0.0);
  CHECK(max_abs_diff(qkv[0].k, lora_project(x, w.w_k, adapters.k)) == 0.0);
  CHECK(max_abs_diff(qkv[0].v, lora_project(x, w.w_v, adapters.v)) == 0.0);
}

TEST_CASE("saturated gates and B = 0 collapse the new stream to x·W_q") {
  Rng rng(7);
  ContinualModel model(Backbone(small_config(8, 2, 1), 1));
  model.add_domain(3, 4, 8.0, 7);
  model.add_domain(3, 4, 8.0, 8);
  perturb(model, 0, rng);
  const Tensor x0 = random_tensor({1, 8}, rng);
  const Tensor x0s = concat_rows(std::vector<Tensor>{x0, x0});
  const Tensor x1 = random_tensor({2, 8}, rng);
  const auto& w = model.backbone().block(0);
  // Identical rows give one prior projection p; W_g = -1e9·diag(sign p)
  // drives every pre-activation to -1e9·|p|.
  const Tensor p0 = lora_project(x0, w.w_q, model.domain(0).blocks[0].q);
  auto& gate = model.domain(1).blocks[0].gate->w_g.value();
  for (std::size_t i = 0; i < 8; ++i) {
    REQUIRE(std::abs(p0(0, i)) > 1e-6);
    gate.mutable_data()[i * 8 + i] = p0(0, i) > 0 ? -1e9 : 1e9;
  }
  const Tensor streams[] = {x0s, x1};
  const auto qkv = model.gated_qkv(streams, 0);
  CHECK(max_abs_diff(qkv[1].q, matmul(x1, w.w_q.value())) == 0.0);
}

TEST_CASE("two-domain gating matches a scalar hand computation") {
  Backbone backbone(small_config(2, 1, 1), 1);
  backbone.blocks()[0].w_q.value() = Tensor::matrix({{1, 2}, {0, 1}});
  ContinualModel model(std::move(backbone));
  model.add_domain(2, 1, 1.0, 1);
  model.add_domain(2, 1, 1.0, 2);
  auto& a0 = model.domain(0).blocks[0].q;
  a0.a.value() = Tensor::matrix({{1}, {0}});
  a0.b.value() = Tensor::matrix({{0, 1}});
  auto& a1 = model.domain(1).blocks[0].q;
  a1.a.value() = Tensor::matrix({{0}, {1}});
  a1.b.value() = Tensor::matrix({{1, 0}});
  model.domain(1).blocks[0].gate->w_g.value() = Tensor::matrix({{1, 0}, {0, -1}});

  // P0 = [1,1]·W_q + 1·[0,1] = [1,4]; P1 = [2,-1]·W_q + (-1)·[1,0] = [1,3].
  // Gate pre-activation P0·W_g = [1,-4].
  const Tensor streams[] = {Tensor::matrix({{1, 1}}), Tensor::matrix({{2, -1}})};
  const auto qkv = model.gated_qkv(streams, 0);
  CHECK(qkv[0].q(0, 0) == 1.0);
  CHECK(qkv[0].q(0, 1) == 4.0);
  CHECK(qkv[1].q(0, 0) == doctest::Approx(1.0 + sigma(1.0) * 1.0).epsilon(1e-15));
  CHECK(qkv[1].q(0, 1) == doctest::Approx(3.0 + sigma(-4.0) * 4.0).epsilon(1e-15));
}

TEST_CASE("gated_qkv rejects too many streams") {
  Rng rng(8);
  ContinualModel model(Backbone(small_config(8, 2, 1), 1));
  model.add_domain(3, 4, 8.0, 7);
  const Tensor streams[] = {random_tensor({2, 8}, rng), random_tensor({2, 8}, rng)};
  CHECK_THROWS_AS(model.gated_qkv(streams, 0), Error);
}

TEST_CASE("one stream is the backbone block with LoRA projections") {
  Rng rng(9);
  ContinualModel model(Backbone(small_config(8, 2, 2), 1));
  model.add_domain(3, 4, 8.0, 7);
  perturb(model, 0, rng);
  const Tensor x = random_tensor({6, 8}, rng);
  const Tensor streams[] = {x};
  const auto out = model.multi_block_forward(streams, 0, 3);
  const auto& w = model.backbone().block(0);
  const auto& ad = model.domain(0).blocks[0];
  const Tensor expected = block_forward_projected(x, w, 3, 2, [&](const Tensor& n, Projection p) {
    const LoraAdapter& a = p == Projection::q ? ad.q : p == Projection::k ? ad.k : ad.v;
    const Parameter& w0 = p == Projection::q ? w.w_q : p == Projection::k ? w.w_k : w.w_v;
    return lora_project(n, w0, a);
  });
  REQUIRE(out.size() == 1);
  CHECK(max_abs_diff(out[0], expected) == 0.0);
}

TEST_CASE("prior streams are unchanged by later domains") {
  Rng rng(10);
  ContinualModel model(Backbone(BackboneConfig::tiny(), 3));
  model.add_domain(4, 16, 64.0, 1);
  perturb(model, 0, rng);
  const Tensor images = random_tensor({5, 1, 16, 16}, rng);
  const Tensor before = model.stream_features(images)[0];
  for (std::size_t j = 1; j < 4; ++j) {
    model.add_domain(5, 16, 64.0, 1 + j);
    perturb(model, j, rng);
    const auto after = model.stream_features(images);
    REQUIRE(after.size() == j + 1);
    CHECK(max_abs_diff(after[0], before) <= 1e-12);
  }
}

TEST_CASE("add_domain initialization arithmetic") {
  Rng rng(11);
  ContinualModel model(Backbone(small_config(8, 2, 1), 4));
  model.add_domain(3, 4, 8.0, 1);
  perturb(model, 0, rng);
  model.add_domain(3, 4, 8.0, 2);
  const auto& w = model.backbone().block(0);
  const Tensor x0 = random_tensor({3, 8}, rng), x1 = random_tensor({3, 8}, rng);
  const Tensor streams[] = {x0, x1};
  const auto qkv = model.gated_qkv(streams, 0);
  const Tensor expected =
      add(scale(lora_project(x0, w.w_q, model.domain(0).blocks[0].q), 0.5), matmul(x1, w.w_q.value()));
  CHECK(max_abs_diff(qkv[1].q, expected) < 1e-14);

  // The new set starts at B = 0 and W_g = 0; everything older is frozen.
  for (const auto& blk : model.domain(1).blocks) {
    for (const LoraAdapter* a : {&blk.q, &blk.k, &blk.v}) {
      CHECK(a->b.value().data()[0] == 0.0);
      CHECK(!a->frozen());
    }
    CHECK(!blk.gate->w_g.frozen());
  }
  CHECK(model.domain(0).frozen);
  for (const Parameter* p : model.domain(0).parameters()) CHECK(p->frozen());
  CHECK(model.backbone().all_frozen());
}

TEST_CASE("add_domain never mutates existing sets") {
  Rng rng(12);
  ContinualModel model(Backbone(small_config(8, 2, 2), 4));
  model.add_domain(3, 4, 8.0, 1);
  perturb(model, 0, rng);
  const auto before = checkpoint_bytes(model.domain(0).parameters());
  model.add_domain(3, 4, 8.0, 2);
  CHECK(checkpoint_bytes(model.domain(0).parameters()) == before);
}

TEST_CASE("gradients through a two-domain block match central differences") {
  Rng rng(13);
  ContinualModel model(Backbone(small_config(8, 2, 1), 5));
  model.add_domain(3, 2, 4.0, 1);
  perturb(model, 0, rng);
  model.add_domain(3, 2, 4.0, 2);
  perturb(model, 1, rng);
  const Tensor x0 = with_grad(random_tensor({6, 8}, rng)), x1 = with_grad(random_tensor({6, 8}, rng));
  const Tensor w0 = random_tensor({6, 8}, rng), w1 = random_tensor({6, 8}, rng);
  std::vector<Tensor> inputs{x0, x1};
  for (Parameter* p : model.domain(1).parameters())
    if (!p->frozen()) inputs.push_back(p->value());

  const double block_err = gradient_error(
      [&] {
        const Tensor streams[] = {x0, x1};
        const auto out = model.multi_block_forward(streams, 0, 3);
        return add(probe_loss(out[0], w0), probe_loss(out[1], w1));
      },
      inputs);
  const double qkv_err = gradient_error(
      [&] {
        const Tensor streams[] = {x0, x1};
        const auto out = model.gated_qkv(streams, 0);
        return add(add(probe_loss(out[1].q, w0), probe_loss(out[1].k, w1)), probe_loss(out[1].v, w0));
      },
      inputs);
  MESSAGE("two-domain relative errors: block " << block_err << ", qkv " << qkv_err);
  CHECK(block_err < 1e-6);
  CHECK(qkv_err < 1e-6);
}

TEST_CASE("merge_outputs examples") {
  Rng rng(14);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  const Tensor one[] = {a};
  CHECK(max_abs_diff(merge_outputs(one), a) == 0.0);
  const Tensor same[] = {a, a};
  CHECK(max_abs_diff(merge_outputs(same), a) < 1e-15);
  const Tensor ab[] = {a, b}, ba[] = {b, a};
  CHECK(max_abs_diff(merge_outputs(ab), scale(add(a, b), 0.5)) < 1e-15);
  CHECK(max_abs_diff(merge_outputs(ab), merge_outputs(ba)) == 0.0);
  CHECK_THROWS_AS(merge_outputs(std::span<const Tensor>{}), Error);
}

TEST_CASE("head examples") {
  Rng rng(15);
  ContinualModel model(Backbone(small_config(8, 2, 1), 6));
  model.add_domain(3, 2, 4.0, 1);
  model.add_domain(7, 2, 4.0, 2);
  auto& head = model.domain(0).head;
  head.weight.value() = Tensor({8, 3});
  head.bias.value() = Tensor::vector({0.1, -0.2, 0.3});
  const Tensor logits = model.head_forward(random_tensor({2, 8}, rng), 0);
  CHECK(logits.shape() == Shape{2, 3});
  CHECK(logits(1, 1) == -0.2);
  CHECK(model.head_forward(random_tensor({2, 8}, rng), 1).shape() == Shape{2, 7});
  CHECK(head.weight.frozen());
  CHECK_THROWS_AS(model.head_forward(random_tensor({2, 8}, rng), 2), Error);
}

TEST_CASE("parameter accounting") {
  CHECK(domain_parameter_count(32, 4, 16, 4, true) == 16516);
  CHECK(domain_parameter_count(32, 4, 16, 4, false) == 16516 - 4 * 1024);

  ContinualModel model(Backbone(BackboneConfig::tiny(), 1));
  const auto empty = model.param_report();
  CHECK(empty.adapters() == 0);
  CHECK(empty.per_domain.empty());
  CHECK(empty.backbone == model.backbone().parameter_count());

  model.add_domain(4, 16, 64.0, 1);
  model.add_domain(6, 16, 64.0, 2);
  const auto report = model.param_report();
  REQUIRE(report.per_domain.size() == 2);
  CHECK(report.per_domain[0] == 16516);
  CHECK(report.per_domain[1] == domain_parameter_count(32, 4, 16, 6, true));
  CHECK(report.adapters() == report.per_domain[0] + report.per_domain[1]);
  CHECK(report.total() == report.backbone + report.adapters());
  // Only the newest domain trains.
  CHECK(report.trainable == report.per_domain[1]);

  ContinualModel gateless(Backbone(BackboneConfig::tiny(), 1), GateMode::identity);
  gateless.add_domain(4, 16, 64.0, 1);
  CHECK(gateless.param_report().per_domain[0] == domain_parameter_count(32, 4, 16, 4, false));

  model.domain(1).set_frozen(true);
  const auto frozen = model.param_report();
  CHECK(frozen.total() == report.total());
  CHECK(frozen.trainable == 0);
}
