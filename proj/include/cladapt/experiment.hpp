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

// Experiment configuration and the run / ablate / compare / report commands.
//
// Config files are flat `key = value` lines; `#` starts a comment. Keys:
//   method, sequence, size, rank, alpha, k, epochs, seed, out, gating,
//   lr0, lr_min, batch_size, prefix_len, normalize, augment,
//   samples_per_class, noise, pretrain_epochs, seeds

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cladapt/backbone.hpp"
#include "cladapt/learner.hpp"
#include "cladapt/training.hpp"

namespace cladapt {

// A rejected configuration value; `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ExperimentConfig {
  Method method = Method::ours;
  SequenceSpec sequence{{"generic", "finegrained", "texture"}};
  SizeTag size = SizeTag::tiny;
  std::size_t rank = 16;
  double alpha = 64.0;
  std::size_t k = 10;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  bool gating = true;
  double lr0 = 0.01;
  double lr_min = 0.001;
  std::size_t batch_size = 32;
  std::size_t prefix_len = 8;
  bool normalize = false;
  bool augment = false;
  std::size_t samples_per_class = 100;
  double noise = 0.1;
  std::size_t pretrain_epochs = 10;
  std::size_t seeds = 1;  // ablation repeats with seeds seed, seed+1, ...

  static ExperimentConfig from_file(const std::filesystem::path& path);
  static ExperimentConfig from_text(std::string_view text);
  // Applies one key=value pair; throws ConfigError naming the key.
  void set(std::string_view key, std::string_view value);
  void validate() const;
  // ours with gating off runs as ours_no_gate.
  Method effective_method() const;
  TrainConfig train_config() const;
  LearnerOptions learner_options() const;
  std::string to_json() const;
};

// The domains every sequence draws from, plus the surrogate-pretrained
// backbone. A pure function of (size, seed, samples_per_class, noise,
// pretrain_epochs).
struct Suite {
  Backbone backbone;
  DomainSuite domains;
  std::vector<double> pretrain_loss;
};

std::vector<SyntheticDomainSpec> suite_specs(const ExperimentConfig& config);
SyntheticDomainSpec pretrain_spec(const ExperimentConfig& config);
// Memoized per process on the parameters above.
std::shared_ptr<const Suite> build_suite(const ExperimentConfig& config);

RunResult run_experiment(const ExperimentConfig& config,
                         std::function<void(std::size_t, const Learner&)> on_stage_end = {});

// All orderings of the three suite domains in lexicographic order.
std::vector<SequenceSpec> all_sequences();

// Median wall-clock seconds of `repeats` single-image forwards (features and
// head of the newest domain).
double median_inference_seconds(const Learner& learner, const DomainDataset& data,
                                std::size_t repeats);

struct RunArtifacts {
  RunResult result;
  std::filesystem::path dir;
};

// Writes config.json, checkpoints/stage<i>.ckpt, trace.csv, matrix.csv and
// metrics.json under config.out.
RunArtifacts cmd_run(const ExperimentConfig& config);

enum class AblationAxis { k, rank, sequence, gating, size };
std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

// Writes ablate.csv (one row per setting and sequence) and
// ablate_summary.csv (one row per setting) under config.out.
std::filesystem::path cmd_ablate(const ExperimentConfig& config, AblationAxis axis);

// Writes compare.csv: one row per method and sequence.
std::filesystem::path cmd_compare(const ExperimentConfig& config, std::size_t timing_repeats = 1000);

// Renders the artifacts under `dir` as text tables.
void cmd_report(const std::filesystem::path& dir, std::ostream& out);

std::string format_double(double value);

}  // namespace cladapt
