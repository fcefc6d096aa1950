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

// Optimizer, learning-rate schedule and batching.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cladapt/data.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

struct TrainConfig {
  double lr0 = 0.01;
  double lr_min = 0.001;
  double weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool augment = false;

  void validate() const;
};

// lr_min + ½(lr0 − lr_min)(1 + cos(π·epoch/total)), for 0 ≤ epoch ≤ total.
double cosine_lr(std::size_t epoch, std::size_t total, const TrainConfig& cfg);

// Plain SGD: p ← p − lr·(g + weight_decay·p) on every non-frozen parameter,
// then clears the gradients. Frozen parameters are skipped. Throws when a
// trainable parameter has no gradient.
void sgd_step(std::span<Parameter* const> params, double lr, double weight_decay = 0.0);

void clear_grads(std::span<Parameter* const> params);

// Epoch shuffle seeded by mix_seed(seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Images for `indices`; augmented with draws from `augment_rng` when non-null.
Tensor load_batch(const DomainDataset& data, std::span<const std::size_t> indices,
                  Rng* augment_rng);

}  // namespace cladapt
