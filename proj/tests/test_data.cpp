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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cladapt/checkpoint.hpp"
#include "cladapt/data.hpp"
#include "cladapt/schedule.hpp"
#include "support.hpp"

using namespace cladapt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cladapt_test_data";
  fs::create_directories(dir);
  return dir / name;
}

// Softmax regression on raw pixels, full batch; returns validation accuracy.
double linear_probe(const DomainSplit& split) {
  const std::size_t d = split.train.image_numel(), c = split.train.num_classes;
  std::vector<std::size_t> all(split.train.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor x = split.train.images(all).reshaped({all.size(), d});
  const auto labels = split.train.labels_of(all);
  Parameter w("w", Tensor({d, c}, 0.0)), b("b", Tensor({c}, 0.0));
  Parameter* params[] = {&w, &b};
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(cross_entropy(add_row(matmul(x, w.value()), b.value()), labels));
    }
    sgd_step(params, 0.5);
  }
  std::vector<std::size_t> val(split.val.size());
  std::iota(val.begin(), val.end(), 0);
  const Tensor logits = add_row(matmul(split.val.images(val).reshaped({val.size(), d}), w.value()), b.value());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < val.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits(r, k) > logits(r, best)) best = k;
    hits += best == split.val.labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(val.size());
}

}  // namespace

TEST_CASE("same spec twice gives bitwise-identical datasets") {
  for (auto kind : {DomainKind::generic, DomainKind::finegrained, DomainKind::texture}) {
    const SyntheticDomainSpec spec{kind, 4, 30, 16, 1, 0.1, 17};
    const auto a = generate_domain(spec), b = generate_domain(spec);
    CHECK(a.train.same_content(b.train));
    CHECK(a.val.same_content(b.val));
  }
}

TEST_CASE("4 classes × 30 samples split 96/24, stratified") {
  const auto split = generate_domain({DomainKind::generic, 4, 30, 16, 1, 0.1, 1});
  CHECK(split.train.size() + split.val.size() == 120);
  CHECK(split.train.size() == 96);
  CHECK(split.val.size() == 24);
  for (std::uint32_t c = 0; c < 4; ++c) {
    CHECK(std::count(split.train.labels.begin(), split.train.labels.end(), c) == 24);
    CHECK(std::count(split.val.labels.begin(), split.val.labels.end(), c) == 6);
  }
  for (double v : split.train.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("invalid specs are rejected") {
  CHECK_THROWS_AS(generate_domain({DomainKind::generic, 0, 30, 16, 1, 0.1, 1}), Error);
  CHECK_THROWS_AS(generate_domain({DomainKind::generic, 4, 0, 16, 1, 0.1, 1}), Error);
  CHECK_THROWS_AS(parse_domain_kind("photos"), Error);
}

TEST_CASE("a linear probe on raw pixels finds generic easier than texture at equal noise") {
  const double generic = linear_probe(generate_domain({DomainKind::generic, 5, 40, 16, 1, 0.1, 21}));
  const double texture = linear_probe(generate_domain({DomainKind::texture, 5, 40, 16, 1, 0.1, 21}));
  MESSAGE("linear probe accuracy: generic " << generic << ", texture " << texture);
  CHECK(generic > texture);
}

TEST_CASE("augmentation examples") {
  Rng rng(4);
  const auto split = generate_domain({DomainKind::texture, 2, 5, 16, 1, 0.1, 2});
  const auto img = split.train.image(0);
  const std::vector<double> original(img.begin(), img.end());

  AugmentChoice flip;
  flip.flip = true;
  const auto once = apply_augment(original, 1, 16, 16, flip);
  CHECK(once != original);
  CHECK(apply_augment(once, 1, 16, 16, flip) == original);

  CHECK(apply_augment(original, 1, 16, 16, AugmentChoice{}) == original);

  AugmentChoice quarter;
  quarter.quarter_turns = 1;
  auto turned = original;
  for (int i = 0; i < 4; ++i) turned = apply_augment(turned, 1, 16, 16, quarter);
  CHECK(turned == original);

  for (int trial = 0; trial < 50; ++trial) {
    const auto out = augment(original, 1, 16, 16, rng);
    CHECK(out.size() == original.size());
    for (double v : out) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("a shift moves pixels and pads with zeros") {
  std::vector<double> img(16);
  std::iota(img.begin(), img.end(), 1.0);
  AugmentChoice shift;
  shift.shift_x = 1;
  const auto out = apply_augment(img, 1, 4, 4, shift);
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(out[y * 4] == 0.0);
    for (std::size_t x = 1; x < 4; ++x) CHECK(out[y * 4 + x] == img[y * 4 + x - 1]);
  }
}

TEST_CASE("draws stay within the documented ranges") {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto c = draw_augment(rng);
    CHECK(c.quarter_turns < 4);
    CHECK(std::abs(c.shift_x) <= kMaxJitter);
    CHECK(std::abs(c.shift_y) <= kMaxJitter);
  }
}

TEST_CASE("save then load round-trips byte-exactly") {
  const auto split = generate_domain({DomainKind::finegrained, 3, 10, 16, 1, 0.1, 5});
  const fs::path path = scratch("finegrained.cltd");
  save_dataset(split.train, path);
  const auto loaded = load_dataset(path);
  CHECK(loaded.same_content(split.train));
  CHECK(loaded.name == "finegrained");
  std::ostringstream a, b;
  write_dataset(a, split.train);
  write_dataset(b, loaded);
  CHECK(a.str() == b.str());
  CHECK(a.str().substr(0, 5) == "CLTD1");
}

TEST_CASE("format errors are distinct") {
  const auto split = generate_domain({DomainKind::generic, 2, 5, 16, 1, 0.1, 5});
  std::ostringstream out;
  write_dataset(out, split.train);
  const std::string bytes = out.str();

  auto kind_of = [](const std::string& data) {
    std::istringstream in(data);
    try {
      read_dataset(in);
    } catch (const FormatError& e) {
      return e.kind();
    }
    FAIL("expected a format error");
    return FormatError::Kind::invalid;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == FormatError::Kind::bad_magic);
  CHECK(kind_of("") == FormatError::Kind::truncated);
  CHECK(kind_of(bytes.substr(0, bytes.size() - 3)) == FormatError::Kind::truncated);
  std::string version = bytes;
  version[5] = 9;
  CHECK(kind_of(version) == FormatError::Kind::version_mismatch);

  const fs::path empty = scratch("empty.cltd");
  std::ofstream(empty).close();
  try {
    load_dataset(empty);
    FAIL("expected a truncation error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::truncated);
  }
}

TEST_CASE("checkpoints round-trip and restore by name") {
  Rng rng(3);
  Parameter a("backbone.w", cladapt::testing::random_tensor({3, 2}, rng));
  Parameter b("domain0.head.bias", cladapt::testing::random_tensor({4}, rng));
  const Parameter* params[] = {&a, &b};
  std::stringstream buf;
  write_checkpoint(buf, params);
  CHECK(buf.str().substr(0, 5) == "CLCK1");
  const auto records = read_checkpoint(buf);
  REQUIRE(records.size() == 2);
  CHECK(records[0].name == "backbone.w");
  CHECK(records[1].value.shape() == Shape{4});

  Parameter a2("backbone.w", Tensor({3, 2})), b2("domain0.head.bias", Tensor({4}));
  Parameter* targets[] = {&b2, &a2};
  restore_parameters(targets, records);
  CHECK(std::equal(a2.value().data().begin(), a2.value().data().end(), a.value().data().begin()));

  const std::string prefixes[] = {"domain0."};
  CHECK(checkpoint_bytes(params, prefixes).size() < checkpoint_bytes(params).size());

  Parameter wrong("backbone.w", Tensor({2, 3}));
  Parameter* mismatched[] = {&wrong};
  CHECK_THROWS_AS(restore_parameters(mismatched, records), Error);

  std::string bytes = buf.str();
  std::istringstream bad(bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
}
