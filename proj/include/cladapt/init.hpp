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

#include <string>

#include "cladapt/rng.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

inline Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = stddev * rng.normal();
  return t;
}

inline Parameter gaussian_parameter(std::string name, Shape shape, double stddev, Rng& rng) {
  return Parameter(std::move(name), gaussian_tensor(std::move(shape), stddev, rng));
}

}  // namespace cladapt
