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
#include "cladapt/cladapt.h"

#include <cstring>
#include <limits>
#include <sstream>
#include <string>

#include "cladapt/data.hpp"
#include "cladapt/evaluation.hpp"
#include "cladapt/experiment.hpp"

struct cla_config {
  cladapt::ExperimentConfig value;
};

struct cla_dataset {
  cladapt::DomainDataset value;
};

struct cla_run {
  cladapt::RunResult value;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_field;

cla_status fail(cla_status status, std::string message, std::string field = {}) {
  g_error = std::move(message);
  g_field = std::move(field);
  return status;
}

// Runs `fn`, translating exceptions into status codes.
template <typename Fn>
cla_status guarded(Fn&& fn) {
  g_error.clear();
  g_field.clear();
  try {
    return fn();
  } catch (const cladapt::ConfigError& e) {
    return fail(CLA_ERR_CONFIG, e.what(), e.field());
  } catch (const cladapt::FormatError& e) {
    return fail(CLA_ERR_FORMAT, e.what());
  } catch (const std::exception& e) {
    return fail(CLA_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(CLA_ERR_RUNTIME, "unknown error");
  }
}

cla_status copy_text(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (!buf || cap < text.size() + 1) return fail(CLA_ERR_BUFFER, "output buffer too small");
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return CLA_OK;
}

// Parses an enum name, reporting a bad one as an argument error.
template <typename Parse, typename T>
bool parse_name(Parse&& parse, const char* name, T& out) {
  try {
    out = parse(name);
    return true;
  } catch (const std::exception& e) {
    fail(CLA_ERR_ARGUMENT, e.what());
    return false;
  }
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

extern "C" {

const char* cla_version(void) { return "1.0.0"; }
const char* cla_last_error(void) { return g_error.c_str(); }
const char* cla_last_error_field(void) { return g_field.c_str(); }

const char* cla_status_name(cla_status status) {
  switch (status) {
    case CLA_OK: return "ok";
    case CLA_ERR_ARGUMENT: return "argument";
    case CLA_ERR_CONFIG: return "config";
    case CLA_ERR_RUNTIME: return "runtime";
    case CLA_ERR_FORMAT: return "format";
    case CLA_ERR_BUFFER: return "buffer";
  }
  return "unknown";
}

cla_status cla_config_new(cla_config** out) {
  if (!out) return fail(CLA_ERR_ARGUMENT, "out is NULL");
  return guarded([&] {
    *out = new cla_config{};
    return CLA_OK;
  });
}

cla_status cla_config_load(const char* path, cla_config** out) {
  if (!path || !out) return fail(CLA_ERR_ARGUMENT, "path or out is NULL");
  return guarded([&] {
    *out = new cla_config{cladapt::ExperimentConfig::from_file(path)};
    return CLA_OK;
  });
}

cla_status cla_config_set(cla_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return fail(CLA_ERR_ARGUMENT, "config, key or value is NULL");
  return guarded([&] {
    config->value.set(key, value);
    return CLA_OK;
  });
}

cla_status cla_config_validate(const cla_config* config) {
  if (!config) return fail(CLA_ERR_ARGUMENT, "config is NULL");
  return guarded([&] {
    config->value.validate();
    return CLA_OK;
  });
}

cla_status cla_config_json(const cla_config* config, char* buf, size_t cap, size_t* needed) {
  if (!config) return fail(CLA_ERR_ARGUMENT, "config is NULL");
  return guarded([&] { return copy_text(config->value.to_json(), buf, cap, needed); });
}

void cla_config_free(cla_config* config) { delete config; }

cla_status cla_run_sequence(const cla_config* config, cla_run** out) {
  if (!config || !out) return fail(CLA_ERR_ARGUMENT, "config or out is NULL");
  return guarded([&] {
    auto artifacts = cladapt::cmd_run(config->value);
    *out = new cla_run{std::move(artifacts.result)};
    return CLA_OK;
  });
}

size_t cla_run_stages(const cla_run* run) {
  return run && !run->value.matrices.empty() ? run->value.matrices.front().size() : 0;
}

cla_status cla_run_accuracy(const cla_run* run, size_t stage, size_t domain, double* out) {
  if (!run || !out) return fail(CLA_ERR_ARGUMENT, "run or out is NULL");
  const size_t t = cla_run_stages(run);
  if (stage >= t || domain >= t) return fail(CLA_ERR_ARGUMENT, "stage or domain out of range");
  return guarded([&] {
    *out = run->value.matrices.front().at(stage, domain);
    return CLA_OK;
  });
}

cla_status cla_run_metrics(const cla_run* run, double* acc, double* bwt, double* fwt) {
  if (!run || run->value.metrics.empty()) return fail(CLA_ERR_ARGUMENT, "run is NULL");
  const auto& m = run->value.metrics.front();
  if (acc) *acc = m.acc;
  if (bwt) *bwt = m.bwt.value_or(kNaN);
  if (fwt) *fwt = m.fwt.value_or(kNaN);
  return CLA_OK;
}

cla_status cla_run_param_counts(const cla_run* run, uint64_t* backbone, uint64_t* trainable,
                                uint64_t* total) {
  if (!run) return fail(CLA_ERR_ARGUMENT, "run is NULL");
  const auto& p = run->value.params;
  if (backbone) *backbone = p.backbone;
  if (trainable) *trainable = p.trainable;
  if (total) *total = p.total();
  return CLA_OK;
}

void cla_run_free(cla_run* run) { delete run; }

cla_status cla_ablate(const cla_config* config, const char* axis) {
  if (!config || !axis) return fail(CLA_ERR_ARGUMENT, "config or axis is NULL");
  cladapt::AblationAxis which{};
  if (!parse_name(cladapt::parse_ablation_axis, axis, which)) return CLA_ERR_ARGUMENT;
  return guarded([&] {
    cladapt::cmd_ablate(config->value, which);
    return CLA_OK;
  });
}

cla_status cla_compare(const cla_config* config, size_t timing_repeats) {
  if (!config) return fail(CLA_ERR_ARGUMENT, "config is NULL");
  if (timing_repeats == 0) return fail(CLA_ERR_ARGUMENT, "timing_repeats must be positive");
  return guarded([&] {
    cladapt::cmd_compare(config->value, timing_repeats);
    return CLA_OK;
  });
}

cla_status cla_report(const char* dir, char* buf, size_t cap, size_t* needed) {
  if (!dir) return fail(CLA_ERR_ARGUMENT, "dir is NULL");
  return guarded([&] {
    std::ostringstream out;
    cladapt::cmd_report(dir, out);
    return copy_text(out.str(), buf, cap, needed);
  });
}

cla_status cla_dataset_generate(const char* kind, size_t num_classes, size_t samples_per_class,
                                double noise, uint64_t seed, const char* split, cla_dataset** out) {
  if (!kind || !split || !out) return fail(CLA_ERR_ARGUMENT, "kind, split or out is NULL");
  const std::string which(split);
  if (which != "train" && which != "val")
    return fail(CLA_ERR_ARGUMENT, "split must be \"train\" or \"val\"");
  cladapt::DomainKind domain_kind{};
  if (!parse_name(cladapt::parse_domain_kind, kind, domain_kind)) return CLA_ERR_ARGUMENT;
  return guarded([&] {
    cladapt::SyntheticDomainSpec spec;
    spec.kind = domain_kind;
    spec.num_classes = num_classes;
    spec.samples_per_class = samples_per_class;
    spec.noise = noise;
    spec.seed = seed;
    auto both = cladapt::generate_domain(spec);
    *out = new cla_dataset{which == "train" ? std::move(both.train) : std::move(both.val)};
    return CLA_OK;
  });
}

cla_status cla_dataset_load(const char* path, cla_dataset** out) {
  if (!path || !out) return fail(CLA_ERR_ARGUMENT, "path or out is NULL");
  return guarded([&] {
    *out = new cla_dataset{cladapt::load_dataset(path)};
    return CLA_OK;
  });
}

cla_status cla_dataset_save(const cla_dataset* dataset, const char* path) {
  if (!dataset || !path) return fail(CLA_ERR_ARGUMENT, "dataset or path is NULL");
  return guarded([&] {
    cladapt::save_dataset(dataset->value, path);
    return CLA_OK;
  });
}

size_t cla_dataset_size(const cla_dataset* dataset) { return dataset ? dataset->value.size() : 0; }

size_t cla_dataset_num_classes(const cla_dataset* dataset) {
  return dataset ? dataset->value.num_classes : 0;
}

size_t cla_dataset_image_numel(const cla_dataset* dataset) {
  return dataset ? dataset->value.image_numel() : 0;
}

cla_status cla_dataset_label(const cla_dataset* dataset, size_t index, uint32_t* out) {
  if (!dataset || !out) return fail(CLA_ERR_ARGUMENT, "dataset or out is NULL");
  if (index >= dataset->value.size()) return fail(CLA_ERR_ARGUMENT, "index out of range");
  *out = dataset->value.labels[index];
  return CLA_OK;
}

cla_status cla_dataset_pixels(const cla_dataset* dataset, size_t index, double* out, size_t cap) {
  if (!dataset || !out) return fail(CLA_ERR_ARGUMENT, "dataset or out is NULL");
  if (index >= dataset->value.size()) return fail(CLA_ERR_ARGUMENT, "index out of range");
  const auto img = dataset->value.image(index);
  if (cap < img.size()) return fail(CLA_ERR_BUFFER, "output buffer too small");
  std::memcpy(out, img.data(), img.size() * sizeof(double));
  return CLA_OK;
}

void cla_dataset_free(cla_dataset* dataset) { delete dataset; }

cla_status cla_compute_metrics(const double* matrix, size_t stages, const double* chance,
                               double* acc, double* bwt, double* fwt) {
  if (!matrix || !chance || stages == 0) return fail(CLA_ERR_ARGUMENT, "empty matrix or chance");
  return guarded([&] {
    cladapt::AccuracyMatrix r(stages);
    for (size_t i = 0; i < stages; ++i)
      for (size_t j = 0; j < stages; ++j) r.set(i, j, matrix[i * stages + j]);
    const auto m = cladapt::compute_metrics(r, std::span<const double>(chance, stages));
    if (acc) *acc = m.acc;
    if (bwt) *bwt = m.bwt.value_or(kNaN);
    if (fwt) *fwt = m.fwt.value_or(kNaN);
    return CLA_OK;
  });
}

}  // extern "C"
