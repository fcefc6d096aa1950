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
#include "cladapt/schedule.hpp"

#include <cmath>
#include <numeric>

#include "cladapt/rng.hpp"

namespace cladapt {

void TrainConfig::validate() const {
  if (!(lr_min > 0.0)) throw Error("train config: lr_min must be positive");
  if (!(lr0 > lr_min)) throw Error("train config: lr0 must exceed lr_min");
  if (weight_decay < 0.0) throw Error("train config: weight_decay must be non-negative");
  if (epochs == 0) throw Error("train config: epochs must be positive");
  if (batch_size == 0) throw Error("train config: batch_size must be positive");
}

double cosine_lr(std::size_t epoch, std::size_t total, const TrainConfig& cfg) {
  if (total == 0 || epoch > total) {
    throw Error("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                std::to_string(total) + "]");
  }
  // Endpoints are returned verbatim; the closed form may round at e = 0.
  if (epoch == 0) return cfg.lr0;
  if (epoch == total) return cfg.lr_min;
  const double progress = static_cast<double>(epoch) / static_cast<double>(total);
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

void sgd_step(std::span<Parameter* const> params, double lr, double weight_decay) {
  for (Parameter* p : params) {
    if (p->frozen()) continue;
    if (!p->value().has_grad()) throw Error("sgd_step: missing gradient for '" + p->name() + "'");
  }
  for (Parameter* p : params) {
    if (p->frozen()) continue;
    auto data = p->value().mutable_data();
    auto grad = p->value().grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] -= lr * (grad[i] + weight_decay * data[i]);
    }
    p->value().clear_grad();
  }
}

void clear_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->value().clear_grad();
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Tensor load_batch(const DomainDataset& data, std::span<const std::size_t> indices,
                  Rng* augment_rng) {
  if (augment_rng == nullptr) return data.images(indices);
  std::vector<double> pixels;
  pixels.reserve(indices.size() * data.image_numel());
  for (auto i : indices) {
    auto img = augment(data.image(i), data.channels, data.height, data.width, *augment_rng);
    pixels.insert(pixels.end(), img.begin(), img.end());
  }
  return Tensor({indices.size(), data.channels, data.height, data.width}, std::move(pixels));
}

}  // namespace cladapt
