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

// KNN evaluation of frozen features and the continual-learning metrics.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cladapt/data.hpp"
#include "cladapt/learner.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

struct FeatureBank {
  Tensor features;  // N × d
  std::vector<std::uint32_t> labels;
  std::size_t domain_id = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
};

// Worker count for feature extraction: CL_ADAPT_THREADS when set to a
// positive integer, otherwise the hardware concurrency.
std::size_t evaluation_threads();

// Features of every image in `data` under `selector`. Rows are independent,
// so the result does not depend on `threads` (0 means evaluation_threads()).
FeatureBank extract_features(const Learner& learner, const DomainDataset& data,
                             const FeatureSelector& selector, std::size_t domain_id,
                             std::size_t threads = 0);

// Row-wise L2 normalization; zero rows stay zero.
Tensor l2_normalize(const Tensor& features);

// Majority vote over the k nearest bank rows by Euclidean distance. Ties in
// the vote go to the smaller summed distance, then the smaller label.
std::vector<std::uint32_t> knn_classify(const FeatureBank& bank, const Tensor& queries,
                                        std::size_t k);

// Fraction of `queries` rows classified correctly. `normalize` L2-normalizes
// both sides first.
double knn_accuracy(const FeatureBank& bank, const FeatureBank& queries, std::size_t k,
                    bool normalize = false);

// Accuracy of `domain`'s head (argmax of logits) on `data`.
double head_accuracy(const Learner& learner, std::size_t domain, const DomainDataset& data);

// R[i][j]: accuracy on domain j after stage i. Unfilled entries are empty.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t stages);

  std::size_t size() const { return size_; }
  void set(std::size_t stage, std::size_t domain, double accuracy);
  std::optional<double> get(std::size_t stage, std::size_t domain) const;
  // Throws when the entry is unfilled.
  double at(std::size_t stage, std::size_t domain) const;
  std::vector<double> row(std::size_t stage) const;
  std::vector<double> diagonal() const;

 private:
  std::size_t size_ = 0;
  std::vector<std::optional<double>> cells_;
};

struct CLMetrics {
  double acc = 0.0;
  std::optional<double> bwt;  // absent when T = 1
  std::optional<double> fwt;
};

// acc = mean of the final row; bwt = mean over j < T−1 of R[T−1][j] − R[j][j];
// fwt = mean over j > 0 of R[j−1][j] − chance[j].
CLMetrics compute_metrics(const AccuracyMatrix& matrix, std::span<const double> chance);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (divisor n)
};

struct MetricSummary {
  std::size_t runs = 0;
  MeanStd acc;
  std::optional<MeanStd> bwt;  // present when every run has bwt
  std::optional<MeanStd> fwt;
};

MeanStd mean_std(std::span<const double> values);
MetricSummary summarize_runs(std::span<const CLMetrics> runs);

}  // namespace cladapt
