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

// Independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "cladapt/rng.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = scale * rng.normal();
  return t;
}

inline Tensor with_grad(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ‖a − n‖ / max(‖a‖, ‖n‖), with the denominator floored at 1e-10.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  return norm2(diff) / std::max({norm2(analytic), norm2(numeric), 1e-10});
}

// Largest relative error between the taped gradient of `loss` and central
// differences with step `h`, over every tensor in `inputs`.
inline double gradient_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                             double h = 1e-5) {
  for (Tensor t : inputs) t.clear_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  double worst = 0.0;
  for (const auto& input : inputs) {
    Tensor t = input;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

// Weighted sum of every element with fixed random weights, so every output
// element contributes to the scalar.
inline Tensor probe_loss(const Tensor& y, const Tensor& weights) {
  return sum(mul(y, weights));
}

// Exhaustive KNN reference: every bank point's rank is the number of points
// strictly ahead of it under (squared distance, label); the k lowest ranks are
// the neighbors. Votes, then summed distance, then label.
inline std::uint32_t knn_oracle(const std::vector<std::vector<double>>& bank,
                                const std::vector<std::uint32_t>& labels,
                                const std::vector<double>& query, std::size_t k) {
  const std::size_t n = bank.size();
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < query.size(); ++c) s += (query[c] - bank[i][c]) * (query[c] - bank[i][c]);
    d2[i] = s;
  }
  std::map<std::uint32_t, std::pair<std::size_t, double>> tally;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ahead = 0, tied_before = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (d2[j] < d2[i] || (d2[j] == d2[i] && labels[j] < labels[i])) ++ahead;
      else if (j < i && d2[j] == d2[i] && labels[j] == labels[i]) ++tied_before;
    }
    // Exact (distance, label) duplicates are interchangeable; admit them in
    // index order.
    if (ahead + tied_before < k) {
      tally[labels[i]].first += 1;
      tally[labels[i]].second += std::sqrt(d2[i]);
    }
  }
  std::uint32_t best = 0;
  std::size_t best_votes = 0;
  double best_spread = 0.0;
  bool first = true;
  for (const auto& [label, vs] : tally) {
    const auto [votes, spread] = vs;
    if (first || votes > best_votes || (votes == best_votes && spread < best_spread)) {
      best = label;
      best_votes = votes;
      best_spread = spread;
      first = false;
    }
  }
  return best;
}

}  // namespace cladapt::testing
