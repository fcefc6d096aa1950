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
#include "cladapt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

namespace cladapt {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

void FeatureBank::validate() const {
  if (labels.empty()) throw Error("feature bank: empty");
  if (features.rank() != 2 || features.rows() != labels.size())
    throw DimensionError("feature bank: " + shape_to_string(features.shape()) + " features for " +
                         std::to_string(labels.size()) + " labels");
}

std::size_t evaluation_threads() {
  if (const char* env = std::getenv("CL_ADAPT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

FeatureBank extract_features(const Learner& learner, const DomainDataset& data,
                             const FeatureSelector& selector, std::size_t domain_id,
                             std::size_t threads) {
  if (data.size() == 0) throw Error("extract_features: dataset '" + data.name + "' is empty");
  if (!selector.merged && selector.domain >= learner.num_domains())
    throw Error("extract_features: domain " + std::to_string(selector.domain) +
                " is not registered");
  const std::size_t n = data.size(), d = learner.config().embed_dim;
  const std::size_t batches = (n + kEvalBatch - 1) / kEvalBatch;
  if (threads == 0) threads = evaluation_threads();
  threads = std::min(threads, batches);

  std::vector<double> rows(n * d);
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t b = worker; b < batches; b += threads) {
        const std::size_t begin = b * kEvalBatch, end = std::min(n, begin + kEvalBatch);
        const auto idx = range_indices(begin, end);
        const Tensor f = learner.features(data.images(idx), selector);
        std::copy(f.data().begin(), f.data().end(), rows.begin() + begin * d);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  FeatureBank bank;
  bank.features = Tensor({n, d}, std::move(rows));
  bank.labels = data.labels;
  bank.domain_id = domain_id;
  return bank;
}

Tensor l2_normalize(const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("l2_normalize: expected a matrix");
  Tensor out = features.clone();
  auto v = out.mutable_data();
  const std::size_t cols = features.cols();
  for (std::size_t r = 0; r < features.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += v[r * cols + c] * v[r * cols + c];
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] *= inv;
  }
  return out;
}

std::vector<std::uint32_t> knn_classify(const FeatureBank& bank, const Tensor& queries,
                                        std::size_t k) {
  bank.validate();
  const std::size_t n = bank.size(), d = bank.dim();
  if (k == 0) throw Error("knn: k must be positive");
  if (k > n)
    throw Error("knn: k = " + std::to_string(k) + " exceeds bank size " + std::to_string(n));
  if (queries.rank() != 2 || queries.cols() != d)
    throw DimensionError("knn: queries " + shape_to_string(queries.shape()) +
                         " do not match bank width " + std::to_string(d));
  const auto bf = bank.features.data();
  const auto qf = queries.data();
  std::uint32_t max_label = 0;
  for (auto l : bank.labels) max_label = std::max(max_label, l);

  std::vector<std::uint32_t> out(queries.rows());
  std::vector<std::pair<double, std::uint32_t>> dist(n);
  std::vector<std::size_t> votes(max_label + 1);
  std::vector<double> spread(max_label + 1);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = qf[q * d + c] - bf[i * d + c];
        s += diff * diff;
      }
      dist[i] = {s, bank.labels[i]};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(spread.begin(), spread.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      ++votes[dist[i].second];
      spread[dist[i].second] += std::sqrt(dist[i].first);
    }
    std::uint32_t best = 0;
    for (std::uint32_t l = 1; l <= max_label; ++l) {
      if (votes[l] > votes[best] || (votes[l] == votes[best] && spread[l] < spread[best])) best = l;
    }
    out[q] = best;
  }
  return out;
}

double knn_accuracy(const FeatureBank& bank, const FeatureBank& queries, std::size_t k,
                    bool normalize) {
  queries.validate();
  std::vector<std::uint32_t> pred;
  if (normalize) {
    FeatureBank normed = bank;
    normed.features = l2_normalize(bank.features);
    pred = knn_classify(normed, l2_normalize(queries.features), k);
  } else {
    pred = knn_classify(bank, queries.features, k);
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == queries.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double head_accuracy(const Learner& learner, std::size_t domain, const DomainDataset& data) {
  if (data.size() == 0) throw Error("head_accuracy: dataset '" + data.name + "' is empty");
  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalBatch) {
    const auto idx = range_indices(begin, std::min(data.size(), begin + kEvalBatch));
    const Tensor logits = learner.logits(data.images(idx), domain);
    const std::size_t c = logits.cols();
    const auto v = logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = v.subspan(r * c, c);
      const auto arg = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hits += arg == data.labels[idx[r]];
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

AccuracyMatrix::AccuracyMatrix(std::size_t stages) : size_(stages), cells_(stages * stages) {}

void AccuracyMatrix::set(std::size_t stage, std::size_t domain, double accuracy) {
  if (stage >= size_ || domain >= size_) throw Error("accuracy matrix: index out of range");
  if (!(accuracy >= 0.0 && accuracy <= 1.0))
    throw Error("accuracy matrix: accuracy " + std::to_string(accuracy) + " outside [0, 1]");
  cells_[stage * size_ + domain] = accuracy;
}

std::optional<double> AccuracyMatrix::get(std::size_t stage, std::size_t domain) const {
  if (stage >= size_ || domain >= size_) throw Error("accuracy matrix: index out of range");
  return cells_[stage * size_ + domain];
}

double AccuracyMatrix::at(std::size_t stage, std::size_t domain) const {
  const auto v = get(stage, domain);
  if (!v)
    throw Error("accuracy matrix: R[" + std::to_string(stage) + "][" + std::to_string(domain) +
                "] is unfilled");
  return *v;
}

std::vector<double> AccuracyMatrix::row(std::size_t stage) const {
  std::vector<double> out;
  for (std::size_t j = 0; j < size_; ++j) out.push_back(at(stage, j));
  return out;
}

std::vector<double> AccuracyMatrix::diagonal() const {
  std::vector<double> out;
  for (std::size_t j = 0; j < size_; ++j) out.push_back(at(j, j));
  return out;
}

CLMetrics compute_metrics(const AccuracyMatrix& matrix, std::span<const double> chance) {
  const std::size_t t = matrix.size();
  if (t == 0) throw Error("compute_metrics: empty accuracy matrix");
  CLMetrics m;
  double total = 0.0;
  for (std::size_t j = 0; j < t; ++j) total += matrix.at(t - 1, j);
  m.acc = total / static_cast<double>(t);
  if (t < 2) return m;
  if (chance.size() != t)
    throw Error("compute_metrics: " + std::to_string(chance.size()) + " chance levels for " +
                std::to_string(t) + " domains");
  double back = 0.0, fwd = 0.0;
  for (std::size_t j = 0; j + 1 < t; ++j) back += matrix.at(t - 1, j) - matrix.at(j, j);
  for (std::size_t j = 1; j < t; ++j) fwd += matrix.at(j - 1, j) - chance[j];
  m.bwt = back / static_cast<double>(t - 1);
  m.fwt = fwd / static_cast<double>(t - 1);
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw Error("mean_std: no values");
  // Sorted accumulation keeps the result independent of input order.
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(v.size()))};
}

MetricSummary summarize_runs(std::span<const CLMetrics> runs) {
  if (runs.empty()) throw Error("summarize_runs: no runs");
  MetricSummary s;
  s.runs = runs.size();
  std::vector<double> acc, bwt, fwt;
  for (const auto& r : runs) {
    acc.push_back(r.acc);
    if (r.bwt) bwt.push_back(*r.bwt);
    if (r.fwt) fwt.push_back(*r.fwt);
  }
  s.acc = mean_std(acc);
  if (bwt.size() == runs.size()) s.bwt = mean_std(bwt);
  if (fwt.size() == runs.size()) s.fwt = mean_std(fwt);
  return s;
}

}  // namespace cladapt
