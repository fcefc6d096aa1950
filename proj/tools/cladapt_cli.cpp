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
// Command-line front end over the C API.
//
//   cladapt run     [--config F] [overrides]
//   cladapt ablate  --axis {k,rank,sequence,gating,size} [--config F] [overrides]
//   cladapt compare [--config F] [--repeats N] [overrides]
//   cladapt report  [DIR | --out DIR]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cladapt/cladapt.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::string config;
  std::optional<std::string> method, seq, size, out;
  std::optional<std::string> rank, k, seed;
  bool no_gate = false;
  std::vector<std::string> sets;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "flat key = value config file");
  cmd->add_option("--method", o.method, "ours, ours_no_gate, prefix, block_expand, seq_lora, full_ft");
  cmd->add_option("--seq", o.seq, "comma-separated domain order, e.g. generic,finegrained,texture");
  cmd->add_option("--rank", o.rank, "LoRA rank");
  cmd->add_option("--k", o.k, "neighbors for KNN evaluation");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--size", o.size, "backbone size: tiny or base");
  cmd->add_flag("--no-gate", o.no_gate, "disable feature gating (ours only)");
  cmd->add_option("--set", o.sets, "extra key=value override, repeatable");
}

int exit_code(cla_status status) {
  if (status == CLA_OK) return 0;
  std::fprintf(stderr, "error: %s\n", cla_last_error());
  return status == CLA_ERR_CONFIG ? kExitConfig : kExitRuntime;
}

// Builds the config: file first, then flags. Returns 0 or an exit code.
int load_config(const Overrides& o, cla_config** out) {
  cla_status st = o.config.empty() ? cla_config_new(out) : cla_config_load(o.config.c_str(), out);
  if (st != CLA_OK) return exit_code(st);
  std::vector<std::pair<std::string, std::string>> pairs;
  if (o.method) pairs.emplace_back("method", *o.method);
  if (o.seq) pairs.emplace_back("sequence", *o.seq);
  if (o.rank) pairs.emplace_back("rank", *o.rank);
  if (o.k) pairs.emplace_back("k", *o.k);
  if (o.seed) pairs.emplace_back("seed", *o.seed);
  if (o.out) pairs.emplace_back("out", *o.out);
  if (o.size) pairs.emplace_back("size", *o.size);
  if (o.no_gate) pairs.emplace_back("gating", "false");
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", s.c_str());
      return kExitConfig;
    }
    pairs.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : pairs) {
    st = cla_config_set(*out, key.c_str(), value.c_str());
    if (st != CLA_OK) return exit_code(st);
  }
  return exit_code(cla_config_validate(*out));
}

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual domain adaptation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cla_version());

  Overrides run_o, ablate_o, compare_o;
  std::string axis, report_dir;
  std::size_t repeats = 1000;
  auto* run = app.add_subcommand("run", "train one domain sequence and write its artifacts");
  add_overrides(run, run_o);
  auto* ablate = app.add_subcommand("ablate", "sweep one ablation axis over all domain orders");
  add_overrides(ablate, ablate_o);
  ablate->add_option("--axis,axis", axis, "k, rank, sequence, gating or size")->required();
  auto* compare = app.add_subcommand("compare", "compare all methods over all domain orders");
  add_overrides(compare, compare_o);
  compare->add_option("--repeats", repeats, "single-image forwards per timing")
      ->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "render the artifacts of a directory");
  report->add_option("dir,--out", report_dir, "artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  cla_config* cfg = nullptr;
  int code = 0;
  if (*run) {
    if ((code = load_config(run_o, &cfg)) == 0) {
      cla_run* result = nullptr;
      code = exit_code(cla_run_sequence(cfg, &result));
      if (code == 0) {
        double acc = 0, bwt = 0, fwt = 0;
        cla_run_metrics(result, &acc, &bwt, &fwt);
        std::printf("acc %s  bwt %s  fwt %s\n", fmt_metric(acc).c_str(), fmt_metric(bwt).c_str(),
                    fmt_metric(fwt).c_str());
      }
      cla_run_free(result);
    }
  } else if (*ablate) {
    if ((code = load_config(ablate_o, &cfg)) == 0) code = exit_code(cla_ablate(cfg, axis.c_str()));
  } else if (*compare) {
    if ((code = load_config(compare_o, &cfg)) == 0) code = exit_code(cla_compare(cfg, repeats));
  } else if (*report) {
    std::size_t needed = 0;
    cla_status st = cla_report(report_dir.c_str(), nullptr, 0, &needed);
    if (st == CLA_ERR_BUFFER) {
      std::string text(needed, '\0');
      st = cla_report(report_dir.c_str(), text.data(), text.size(), &needed);
      if (st == CLA_OK) std::fputs(text.c_str(), stdout);
    }
    code = exit_code(st);
  }
  cla_config_free(cfg);
  return code;
}
