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
#include "cladapt/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "binary_io.hpp"

namespace cladapt {

namespace {

constexpr char kCheckpointMagic[] = "CLCK1";

bool has_prefix(const std::string& name, std::span<const std::string> prefixes) {
  if (prefixes.empty()) return true;
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return name.rfind(p, 0) == 0; });
}

}  // namespace

void write_checkpoint(std::ostream& out, std::span<const Parameter* const> params) {
  out.write(kCheckpointMagic, 5);
  io::put_le<std::uint16_t>(out, kCheckpointVersion);
  for (const Parameter* p : params) {
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name().size()));
    out.write(p->name().data(), static_cast<std::streamsize>(p->name().size()));
    const Shape& shape = p->value().shape();
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) io::put_le<std::uint64_t>(out, e);
    for (double v : p->value().data()) io::put_f64(out, v);
  }
}

std::vector<CheckpointRecord> read_checkpoint(std::istream& in) {
  io::Reader reader(in, "checkpoint");
  reader.expect_magic(std::string_view(kCheckpointMagic, 5));
  const auto version = reader.le<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::version_mismatch,
                      "checkpoint: unsupported version " + std::to_string(version));
  }
  std::vector<CheckpointRecord> records;
  while (!reader.at_end()) {
    CheckpointRecord rec;
    rec.name.resize(reader.le<std::uint32_t>());
    reader.bytes(rec.name.data(), rec.name.size());
    const auto rank = reader.le<std::uint32_t>();
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
      e = static_cast<std::size_t>(reader.le<std::uint64_t>());
      count *= e;
    }
    std::vector<double> data(count);
    for (auto& v : data) v = reader.f64();
    rec.value = Tensor(std::move(shape), std::move(data));
    records.push_back(std::move(rec));
  }
  return records;
}

std::string checkpoint_bytes(std::span<const Parameter* const> params,
                             std::span<const std::string> prefixes) {
  std::vector<const Parameter*> selected;
  for (const Parameter* p : params)
    if (has_prefix(p->name(), prefixes)) selected.push_back(p);
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, selected);
  return out.str();
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, params);
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return read_checkpoint(in);
}

void restore_parameters(std::span<Parameter* const> params,
                        std::span<const CheckpointRecord> records) {
  std::unordered_map<std::string_view, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name.emplace(r.name, &r);
  for (Parameter* p : params) {
    auto it = by_name.find(p->name());
    if (it == by_name.end()) throw Error("checkpoint: missing parameter '" + p->name() + "'");
    const Tensor& src = it->second->value;
    if (src.shape() != p->value().shape()) {
      throw DimensionError("checkpoint: parameter '" + p->name() + "' has shape " +
                           shape_to_string(src.shape()) + ", expected " +
                           shape_to_string(p->value().shape()));
    }
    auto dst = p->value().mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

}  // namespace cladapt
