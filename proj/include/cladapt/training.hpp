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

// Per-domain training with best-epoch selection, and the stage loop that
// fills the accuracy matrix.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cladapt/data.hpp"
#include "cladapt/evaluation.hpp"
#include "cladapt/learner.hpp"
#include "cladapt/schedule.hpp"

namespace cladapt {

struct EpochRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over batches
  double val_acc = 0.0;     // head accuracy on the validation split
};

struct DomainTrainResult {
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
};

// Learning rate of epoch e out of `epochs`: the schedule runs from lr0 at the
// first epoch to lr_min at the last.
double epoch_lr(std::size_t epoch, std::size_t epochs, const TrainConfig& cfg);

// Cross-entropy SGD on `domain`'s head. The trainable parameters end at the
// epoch with the highest validation accuracy (earliest on ties).
DomainTrainResult train_domain(Learner& learner, std::size_t domain, const DomainSplit& data,
                               const TrainConfig& cfg, std::size_t stage = 0);

struct SequenceSpec {
  std::vector<std::string> domains;

  // Comma-separated names, e.g. "generic,finegrained,texture".
  static SequenceSpec parse(std::string_view text);
  void validate() const;
  std::size_t size() const { return domains.size(); }
  std::string to_string() const;
};

using DomainSuite = std::map<std::string, DomainSplit>;

struct RunOptions {
  Method method = Method::ours;
  TrainConfig train;
  LearnerOptions learner;
  std::vector<std::size_t> knn_ks{10};
  bool normalize_features = false;
  std::size_t threads = 0;
  // Called after each stage's training and evaluation.
  std::function<void(std::size_t stage, const Learner&)> on_stage_end;
};

struct RunResult {
  Method method = Method::ours;
  SequenceSpec sequence;
  std::vector<std::size_t> ks;
  std::vector<AccuracyMatrix> matrices;  // one per k
  std::vector<CLMetrics> metrics;        // one per k
  std::vector<double> chance;            // 1 / num_classes per domain
  std::vector<EpochRecord> trace;
  std::vector<std::size_t> best_epochs;
  ParamReport params;
};

// Registers, trains and evaluates each domain of `sequence` in order.
// R[i][j] reads domain j's own view for j ≤ i and the merged view for j > i;
// the KNN bank is the train split and the queries are the validation split.
RunResult run_sequence(const Backbone& pretrained, const SequenceSpec& sequence,
                       const DomainSuite& suite, const RunOptions& options);

}  // namespace cladapt
