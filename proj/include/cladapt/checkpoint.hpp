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

// Parameter checkpoints.
//
// Layout (little-endian): "CLCK1" | u16 version | records until end of file,
// each record being
//   u32 name length | name bytes | u32 rank | rank × u64 extents | f64 payload

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cladapt/tensor.hpp"

namespace cladapt {

constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Tensor value;
};

void write_checkpoint(std::ostream& out, std::span<const Parameter* const> params);
std::vector<CheckpointRecord> read_checkpoint(std::istream& in);

// Serialized bytes of the parameters whose names start with any of `prefixes`
// (all parameters when `prefixes` is empty), in the given order.
std::string checkpoint_bytes(std::span<const Parameter* const> params,
                             std::span<const std::string> prefixes = {});

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);
std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path);

// Copies record values into parameters with matching names. Every parameter
// must be present with an identical shape.
void restore_parameters(std::span<Parameter* const> params,
                        std::span<const CheckpointRecord> records);

}  // namespace cladapt
