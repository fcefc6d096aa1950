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

#include <cstddef>
#include <cstdint>

namespace cladapt {

// splitmix64 step; also used to expand seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives a child seed from (seed, stream): splitmix64 of seed ^ (stream · golden).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// xoshiro256** seeded by four splitmix64 outputs of the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  // 53-bit uniform in [0, 1).
  double uniform();
  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);
  // Box-Muller; one normal per call, the pair's second value is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cladapt
