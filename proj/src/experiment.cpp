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
#include "cladapt/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "cladapt/checkpoint.hpp"

namespace cladapt {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kSuiteDomains{"finegrained", "generic", "texture"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty())
    throw ConfigError(std::string(key), "expected a number, got '" + std::string(value) + "'");
  if constexpr (std::is_unsigned_v<T>) {
    if (value.front() == '-') throw ConfigError(std::string(key), "must not be negative");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "off" || value == "0" || value == "no") return false;
  throw ConfigError(std::string(key), "expected true or false, got '" + std::string(value) + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string summary_cells(const MetricSummary& s) {
  auto pair = [](const std::optional<MeanStd>& m) {
    return m ? format_double(m->mean) + "," + format_double(m->std) : std::string(",");
  };
  return std::to_string(s.runs) + "," + format_double(s.acc.mean) + "," + format_double(s.acc.std) +
         "," + pair(s.bwt) + "," + pair(s.fwt);
}

constexpr const char* kSummaryHeader =
    "runs,acc_mean,acc_std,bwt_mean,bwt_std,fwt_mean,fwt_std";

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

// ---- config ---------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_text(std::string_view text) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (auto hash = view.find('#'); hash != view.npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == view.npos)
      throw ConfigError("config", "line " + std::to_string(line_no) + " is not key = value");
    cfg.set(trim(view.substr(0, eq)), trim(view.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const std::string k(key);
  try {
    if (key == "method") method = parse_method(value);
    else if (key == "sequence") sequence = SequenceSpec::parse(value);
    else if (key == "size") size = parse_size_tag(value);
    else if (key == "rank") rank = parse_number<std::size_t>(key, value);
    else if (key == "alpha") alpha = parse_number<double>(key, value);
    else if (key == "k") this->k = parse_number<std::size_t>(key, value);
    else if (key == "epochs") epochs = parse_number<std::size_t>(key, value);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "out") out = std::string(value);
    else if (key == "gating") gating = parse_bool(key, value);
    else if (key == "lr0") lr0 = parse_number<double>(key, value);
    else if (key == "lr_min") lr_min = parse_number<double>(key, value);
    else if (key == "batch_size") batch_size = parse_number<std::size_t>(key, value);
    else if (key == "prefix_len") prefix_len = parse_number<std::size_t>(key, value);
    else if (key == "normalize") normalize = parse_bool(key, value);
    else if (key == "augment") augment = parse_bool(key, value);
    else if (key == "samples_per_class") samples_per_class = parse_number<std::size_t>(key, value);
    else if (key == "noise") noise = parse_number<double>(key, value);
    else if (key == "pretrain_epochs") pretrain_epochs = parse_number<std::size_t>(key, value);
    else if (key == "seeds") seeds = parse_number<std::size_t>(key, value);
    else throw ConfigError(k, "unknown key");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(k, e.what());
  }
}

void ExperimentConfig::validate() const {
  auto fail = [](const char* field, const std::string& msg) { throw ConfigError(field, msg); };
  try {
    sequence.validate();
  } catch (const Error& e) {
    fail("sequence", e.what());
  }
  for (const auto& d : sequence.domains)
    if (std::find(kSuiteDomains.begin(), kSuiteDomains.end(), d) == kSuiteDomains.end())
      fail("sequence", "unknown domain '" + d + "' (expected generic, finegrained or texture)");
  if (rank == 0) fail("rank", "must be positive");
  if (!(alpha > 0.0)) fail("alpha", "must be positive");
  if (epochs == 0) fail("epochs", "must be positive");
  if (!(lr_min > 0.0)) fail("lr_min", "must be positive");
  if (!(lr0 > lr_min)) fail("lr0", "must exceed lr_min");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (samples_per_class < 5) fail("samples_per_class", "must be at least 5");
  if (!(noise >= 0.0)) fail("noise", "must not be negative");
  if (pretrain_epochs == 0) fail("pretrain_epochs", "must be positive");
  if (seeds == 0) fail("seeds", "must be positive");
  if (out.empty()) fail("out", "must not be empty");
  if (!gating && method != Method::ours && method != Method::ours_no_gate)
    fail("gating", "only applies to methods ours and ours_no_gate");
  std::size_t smallest = SIZE_MAX;
  for (const auto& spec : suite_specs(*this))
    smallest = std::min(smallest, spec.num_classes * (spec.samples_per_class * 4 / 5));
  if (k == 0 || k > smallest)
    fail("k", "must be between 1 and the smallest training split (" + std::to_string(smallest) + ")");
}

Method ExperimentConfig::effective_method() const {
  return method == Method::ours && !gating ? Method::ours_no_gate : method;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.lr0 = lr0;
  t.lr_min = lr_min;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = seed;
  t.augment = augment;
  return t;
}

LearnerOptions ExperimentConfig::learner_options() const {
  return {rank, alpha, prefix_len, seed};
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["method"] = to_string(method);
  j["sequence"] = sequence.to_string();
  j["size"] = to_string(size);
  j["rank"] = rank;
  j["alpha"] = alpha;
  j["k"] = k;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["out"] = out;
  j["gating"] = gating;
  j["lr0"] = lr0;
  j["lr_min"] = lr_min;
  j["batch_size"] = batch_size;
  j["prefix_len"] = prefix_len;
  j["normalize"] = normalize;
  j["augment"] = augment;
  j["samples_per_class"] = samples_per_class;
  j["noise"] = noise;
  j["pretrain_epochs"] = pretrain_epochs;
  j["seeds"] = seeds;
  return j.dump(2) + "\n";
}

// ---- suite ----------------------------------------------------------------

std::vector<SyntheticDomainSpec> suite_specs(const ExperimentConfig& c) {
  const std::size_t n = c.samples_per_class;
  return {
      {DomainKind::generic, 6, n, 16, 1, c.noise, mix_seed(c.seed, 10)},
      {DomainKind::finegrained, 5, n, 16, 1, c.noise, mix_seed(c.seed, 11)},
      {DomainKind::texture, 5, n, 16, 1, c.noise, mix_seed(c.seed, 12)},
  };
}

SyntheticDomainSpec pretrain_spec(const ExperimentConfig& c) {
  return {DomainKind::generic, 8, 40, 16, 1, c.noise, mix_seed(c.seed, 99)};
}

std::shared_ptr<const Suite> build_suite(const ExperimentConfig& config) {
  using Key = std::tuple<SizeTag, std::uint64_t, std::size_t, double, std::size_t>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const Suite>> cache;
  const Key key{config.size, config.seed, config.samples_per_class, config.noise,
                config.pretrain_epochs};
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  auto suite = std::make_shared<Suite>();
  for (const auto& spec : suite_specs(config))
    suite->domains[to_string(spec.kind)] = generate_domain(spec, to_string(spec.kind));
  PretrainOptions opts;
  opts.epochs = config.pretrain_epochs;
  auto pre = pretrain_surrogate(BackboneConfig::preset(config.size),
                                generate_domain(pretrain_spec(config), "pretrain"), config.seed, opts);
  suite->backbone = std::move(pre.backbone);
  suite->pretrain_loss = std::move(pre.epoch_loss);
  cache.emplace(key, suite);
  return suite;
}

RunResult run_experiment(const ExperimentConfig& config,
                         std::function<void(std::size_t, const Learner&)> on_stage_end) {
  config.validate();
  const auto suite = build_suite(config);
  RunOptions opts;
  opts.method = config.effective_method();
  opts.train = config.train_config();
  opts.learner = config.learner_options();
  opts.knn_ks = {config.k};
  opts.normalize_features = config.normalize;
  opts.on_stage_end = std::move(on_stage_end);
  return run_sequence(suite->backbone, config.sequence, suite->domains, opts);
}

std::vector<SequenceSpec> all_sequences() {
  std::vector<std::string> names = kSuiteDomains;
  std::vector<SequenceSpec> out;
  do {
    out.push_back(SequenceSpec{names});
  } while (std::next_permutation(names.begin(), names.end()));
  return out;
}

double median_inference_seconds(const Learner& learner, const DomainDataset& data,
                                std::size_t repeats) {
  if (repeats == 0) throw Error("median_inference_seconds: repeats must be positive");
  if (learner.num_domains() == 0) throw Error("median_inference_seconds: no domain registered");
  const std::size_t domain = learner.num_domains() - 1;
  std::vector<double> times(repeats);
  volatile double sink = 0.0;
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::size_t idx[] = {r % data.size()};
    const Tensor image = data.images(idx);
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor logits = learner.logits(image, domain);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + logits.data()[0];
    times[r] = std::chrono::duration<double>(t1 - t0).count();
  }
  std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(repeats / 2), times.end());
  return times[repeats / 2];
}

// ---- run ------------------------------------------------------------------

RunArtifacts cmd_run(const ExperimentConfig& config) {
  config.validate();
  const fs::path dir(config.out);
  fs::create_directories(dir / "checkpoints");
  write_text(dir / "config.json", config.to_json());

  RunArtifacts artifacts;
  artifacts.dir = dir;
  artifacts.result = run_experiment(config, [&](std::size_t stage, const Learner& learner) {
    const auto params = learner.parameters();
    save_checkpoint(dir / "checkpoints" / ("stage" + std::to_string(stage) + ".ckpt"), params);
  });
  const RunResult& r = artifacts.result;

  std::ostringstream trace;
  trace << "stage,epoch,lr,train_loss,val_acc\n";
  for (const auto& e : r.trace)
    trace << e.stage << ',' << e.epoch << ',' << format_double(e.lr) << ','
          << format_double(e.train_loss) << ',' << format_double(e.val_acc) << '\n';
  write_text(dir / "trace.csv", trace.str());

  std::ostringstream matrix;
  matrix << "stage,eval_domain,accuracy\n";
  const AccuracyMatrix& m = r.matrices.front();
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      matrix << i << ',' << r.sequence.domains[j] << ',' << format_double(m.at(i, j)) << '\n';
  write_text(dir / "matrix.csv", matrix.str());

  const CLMetrics& metrics = r.metrics.front();
  ordered_json j;
  j["method"] = to_string(r.method);
  j["sequence"] = r.sequence.to_string();
  j["k"] = config.k;
  j["rank"] = config.rank;
  j["acc"] = metrics.acc;
  j["bwt"] = metrics.bwt ? ordered_json(*metrics.bwt) : ordered_json(nullptr);
  j["fwt"] = metrics.fwt ? ordered_json(*metrics.fwt) : ordered_json(nullptr);
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  return artifacts;
}

// ---- ablate ---------------------------------------------------------------

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::k: return "k";
    case AblationAxis::rank: return "rank";
    case AblationAxis::sequence: return "sequence";
    case AblationAxis::gating: return "gating";
    case AblationAxis::size: return "size";
  }
  throw Error("unknown ablation axis value");
}

AblationAxis parse_ablation_axis(std::string_view name) {
  for (AblationAxis a : {AblationAxis::k, AblationAxis::rank, AblationAxis::sequence,
                         AblationAxis::gating, AblationAxis::size})
    if (to_string(a) == name) return a;
  throw ConfigError("axis", "unknown axis '" + std::string(name) +
                                "' (expected k, rank, sequence, gating or size)");
}

fs::path cmd_ablate(const ExperimentConfig& config, AblationAxis axis) {
  config.validate();
  struct Setting {
    std::string label;
    ExperimentConfig cfg;
  };
  std::vector<Setting> settings;
  const std::vector<std::size_t> grid_k{10, 20, 100, 200};
  switch (axis) {
    case AblationAxis::k:
      for (std::size_t k : grid_k) settings.push_back({std::to_string(k), config});
      break;
    case AblationAxis::rank:
      for (std::size_t r : {8, 16, 32}) {
        ExperimentConfig c = config;
        c.rank = r;
        settings.push_back({std::to_string(r), c});
      }
      break;
    case AblationAxis::sequence:
      settings.push_back({"all", config});
      break;
    case AblationAxis::gating:
      for (bool on : {true, false}) {
        ExperimentConfig c = config;
        c.method = Method::ours;
        c.gating = on;
        settings.push_back({on ? "on" : "off", c});
      }
      break;
    case AblationAxis::size:
      for (SizeTag s : {SizeTag::tiny, SizeTag::base}) {
        ExperimentConfig c = config;
        c.size = s;
        settings.push_back({to_string(s), c});
      }
      break;
  }

  const fs::path dir(config.out);
  fs::create_directories(dir);
  std::ostringstream rows, summary;
  rows << "axis,setting,method,sequence," << kSummaryHeader << '\n';
  summary << "axis,setting,method," << kSummaryHeader << '\n';
  const auto sequences = all_sequences();

  // The k axis reuses one training run per (sequence, seed) for every k.
  const bool sweep_k = axis == AblationAxis::k;
  std::map<std::string, std::vector<CLMetrics>> per_setting;
  std::map<std::pair<std::string, std::string>, std::vector<CLMetrics>> per_cell;
  const std::size_t passes = sweep_k ? 1 : settings.size();
  for (std::size_t s = 0; s < passes; ++s) {
    for (const auto& seq : sequences) {
      for (std::size_t rep = 0; rep < config.seeds; ++rep) {
        ExperimentConfig c = settings[s].cfg;
        c.sequence = seq;
        c.seed = config.seed + rep;
        c.validate();
        const auto suite = build_suite(c);
        RunOptions opts;
        opts.method = c.effective_method();
        opts.train = c.train_config();
        opts.learner = c.learner_options();
        opts.knn_ks = sweep_k ? grid_k : std::vector<std::size_t>{c.k};
        opts.normalize_features = c.normalize;
        const RunResult r = run_sequence(suite->backbone, seq, suite->domains, opts);
        for (std::size_t q = 0; q < r.metrics.size(); ++q) {
          const std::string& label = sweep_k ? settings[q].label : settings[s].label;
          per_setting[label].push_back(r.metrics[q]);
          per_cell[{label, seq.to_string()}].push_back(r.metrics[q]);
        }
      }
    }
  }
  for (const auto& setting : settings) {
    const std::string method = to_string(setting.cfg.effective_method());
    for (const auto& seq : sequences) {
      const auto& runs = per_cell.at({setting.label, seq.to_string()});
      rows << to_string(axis) << ',' << setting.label << ',' << method << ",\""
           << seq.to_string() << "\"," << summary_cells(summarize_runs(runs)) << '\n';
    }
    summary << to_string(axis) << ',' << setting.label << ',' << method << ','
            << summary_cells(summarize_runs(per_setting.at(setting.label))) << '\n';
  }
  write_text(dir / "ablate.csv", rows.str());
  write_text(dir / "ablate_summary.csv", summary.str());
  return dir;
}

// ---- compare --------------------------------------------------------------

fs::path cmd_compare(const ExperimentConfig& config, std::size_t timing_repeats) {
  config.validate();
  const fs::path dir(config.out);
  fs::create_directories(dir);
  const auto suite = build_suite(config);
  std::ostringstream out;
  out << "method,sequence,size,acc,bwt,fwt,backbone_params,adapter_params,trainable_params,"
         "total_params,median_infer_ms\n";
  for (Method method : all_methods()) {
    for (const auto& seq : all_sequences()) {
      RunOptions opts;
      opts.method = method;
      opts.train = config.train_config();
      opts.learner = config.learner_options();
      opts.knn_ks = {config.k};
      opts.normalize_features = config.normalize;
      const RunResult r = run_sequence(suite->backbone, seq, suite->domains, opts);
      // Timing runs on a freshly built model of the same shape; the cost of a
      // forward does not depend on the trained values.
      auto timed = make_learner(method, suite->backbone, opts.learner);
      for (const auto& name : seq.domains) timed->begin_domain(suite->domains.at(name).train.num_classes);
      const double ms =
          1e3 * median_inference_seconds(*timed, suite->domains.at(seq.domains.back()).val, timing_repeats);
      const CLMetrics& m = r.metrics.front();
      out << to_string(method) << ",\"" << seq.to_string() << "\"," << to_string(config.size) << ','
          << format_double(m.acc) << ',' << optional_cell(m.bwt) << ',' << optional_cell(m.fwt) << ','
          << r.params.backbone << ',' << r.params.adapters() << ',' << r.params.trainable << ','
          << r.params.total() << ',' << format_double(ms) << '\n';
    }
  }
  write_text(dir / "compare.csv", out.str());
  return dir;
}

// ---- report ---------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
      if (c == '"') quoted = !quoted;
      else if (c == ',' && !quoted) cells.push_back(std::exchange(cell, {}));
      else cell += c;
    }
    cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

void print_table(const std::vector<std::vector<std::string>>& rows, std::ostream& out) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], r[c].size());
    }
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c)
      out << std::left << std::setw(static_cast<int>(width[c] + 2)) << r[c];
    out << '\n';
  }
}

std::string percent(const std::string& fraction) {
  if (fraction.empty()) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * std::stod(fraction);
  return s.str();
}

}  // namespace

void cmd_report(const fs::path& dir, std::ostream& out) {
  bool any = false;
  if (fs::exists(dir / "metrics.json")) {
    any = true;
    std::ifstream in(dir / "metrics.json");
    const auto j = nlohmann::json::parse(in);
    out << "method " << j.at("method").get<std::string>() << "  sequence "
        << j.at("sequence").get<std::string>() << "  k " << j.at("k") << "  rank " << j.at("rank")
        << '\n';
    auto cell = [&](const char* key) {
      return j.at(key).is_null() ? std::string("-") : percent(format_double(j.at(key).get<double>()));
    };
    out << "ACC " << cell("acc") << "  BWT " << cell("bwt") << "  FWT " << cell("fwt") << "\n\n";
  }
  if (fs::exists(dir / "matrix.csv")) {
    any = true;
    const auto rows = read_csv(dir / "matrix.csv");
    std::vector<std::string> domains;
    std::map<std::string, std::map<std::string, std::string>> grid;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() < 3) continue;
      if (std::find(domains.begin(), domains.end(), rows[i][1]) == domains.end())
        domains.push_back(rows[i][1]);
      grid[rows[i][0]][rows[i][1]] = percent(rows[i][2]);
    }
    std::vector<std::vector<std::string>> table{{"stage"}};
    for (const auto& d : domains) table[0].push_back(d);
    for (const auto& [stage, cells] : grid) {
      std::vector<std::string> row{stage};
      for (const auto& d : domains) row.push_back(cells.count(d) ? cells.at(d) : "-");
      table.push_back(row);
    }
    out << "accuracy matrix (%)\n";
    print_table(table, out);
    out << '\n';
  }
  for (const char* name : {"ablate_summary.csv", "ablate.csv", "compare.csv"}) {
    if (!fs::exists(dir / name)) continue;
    any = true;
    out << name << '\n';
    print_table(read_csv(dir / name), out);
    out << '\n';
  }
  if (!any) throw Error("report: no run, ablation or comparison artifacts in " + dir.string());
}

}  // namespace cladapt
