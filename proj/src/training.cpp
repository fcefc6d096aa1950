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
#include "cladapt/training.hpp"

#include <set>

namespace cladapt {

double epoch_lr(std::size_t epoch, std::size_t epochs, const TrainConfig& cfg) {
  if (epochs <= 1) return cfg.lr0;
  return cosine_lr(epoch, epochs - 1, cfg);
}

DomainTrainResult train_domain(Learner& learner, std::size_t domain, const DomainSplit& data,
                               const TrainConfig& cfg, std::size_t stage) {
  cfg.validate();
  if (data.train.size() == 0) throw Error("train_domain: training split is empty");
  if (data.val.size() == 0) throw Error("train_domain: validation split is empty");
  if (domain >= learner.num_domains())
    throw Error("train_domain: domain " + std::to_string(domain) + " is not registered");

  auto params = learner.trainable_parameters();
  clear_grads(params);
  DomainTrainResult result;
  std::vector<Tensor> best;
  Rng augment_rng(mix_seed(cfg.seed, 0xa0a0a0a0ULL));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = epoch_lr(e, cfg.epochs, cfg);
    const auto order = epoch_order(data.train.size(), cfg.seed, e);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor images = load_batch(data.train, idx, cfg.augment ? &augment_rng : nullptr);
      const auto labels = data.train.labels_of(idx);
      Tape tape;
      {
        TapeScope scope(tape);
        const Tensor loss = cross_entropy(learner.logits(images, domain), labels);
        tape.backward(loss);
        loss_sum += loss.item();
      }
      sgd_step(params, lr, cfg.weight_decay);
      ++batches;
    }
    EpochRecord rec{stage, e, lr, loss_sum / static_cast<double>(batches),
                    head_accuracy(learner, domain, data.val)};
    result.trace.push_back(rec);
    if (e == 0 || rec.val_acc > result.best_val_acc) {
      result.best_epoch = e;
      result.best_val_acc = rec.val_acc;
      best.clear();
      for (const Parameter* p : params) best.push_back(p->value().clone());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto src = best[i].data();
    auto dst = params[i]->value().mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return result;
}

SequenceSpec SequenceSpec::parse(std::string_view text) {
  SequenceSpec spec;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    std::string_view part = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    spec.domains.emplace_back(part);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  spec.validate();
  return spec;
}

void SequenceSpec::validate() const {
  if (domains.empty()) throw Error("sequence: at least one domain is required");
  std::set<std::string> seen;
  for (const auto& d : domains) {
    if (d.empty()) throw Error("sequence: empty domain name");
    if (!seen.insert(d).second) throw Error("sequence: duplicate domain '" + d + "'");
  }
}

std::string SequenceSpec::to_string() const {
  std::string out;
  for (const auto& d : domains) out += (out.empty() ? "" : ",") + d;
  return out;
}

RunResult run_sequence(const Backbone& pretrained, const SequenceSpec& sequence,
                       const DomainSuite& suite, const RunOptions& options) {
  sequence.validate();
  options.train.validate();
  if (options.knn_ks.empty()) throw Error("run_sequence: no k values");
  std::vector<const DomainSplit*> splits;
  for (const auto& name : sequence.domains) {
    auto it = suite.find(name);
    if (it == suite.end()) throw Error("run_sequence: domain '" + name + "' is not in the suite");
    for (std::size_t k : options.knn_ks)
      if (k == 0 || k > it->second.train.size())
        throw Error("run_sequence: k = " + std::to_string(k) + " exceeds the " + name +
                    " bank of " + std::to_string(it->second.train.size()));
    splits.push_back(&it->second);
  }

  const std::size_t t = sequence.size();
  auto learner = make_learner(options.method, pretrained, options.learner);
  RunResult result;
  result.method = options.method;
  result.sequence = sequence;
  result.ks = options.knn_ks;
  result.matrices.assign(options.knn_ks.size(), AccuracyMatrix(t));
  for (const auto* s : splits) result.chance.push_back(1.0 / static_cast<double>(s->train.num_classes));

  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t id = learner->begin_domain(splits[i]->train.num_classes);
    TrainConfig cfg = options.train;
    cfg.seed = mix_seed(options.train.seed, 0x5100 + i);
    auto trained = train_domain(*learner, id, *splits[i], cfg, i);
    result.best_epochs.push_back(trained.best_epoch);
    result.trace.insert(result.trace.end(), trained.trace.begin(), trained.trace.end());

    for (std::size_t j = 0; j < t; ++j) {
      const FeatureSelector selector = j <= i ? FeatureSelector::of(j) : FeatureSelector::merged_view();
      const FeatureBank bank = extract_features(*learner, splits[j]->train, selector, j, options.threads);
      const FeatureBank queries = extract_features(*learner, splits[j]->val, selector, j, options.threads);
      for (std::size_t q = 0; q < options.knn_ks.size(); ++q)
        result.matrices[q].set(i, j, knn_accuracy(bank, queries, options.knn_ks[q], options.normalize_features));
    }
    if (options.on_stage_end) options.on_stage_end(i, *learner);
  }
  for (const auto& m : result.matrices) result.metrics.push_back(compute_metrics(m, result.chance));
  result.params = learner->param_report();
  return result;
}

}  // namespace cladapt
