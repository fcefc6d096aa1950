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

// Synthetic image domains and their on-disk format.
//
// Three domain kinds stand in for the contrast between generic objects,
// fine-grained categories and textures:
//   generic      well separated smooth prototypes plus pixel noise
//   finegrained  one shared prototype plus small class-specific perturbations
//   texture      sinusoid gratings whose class is the spatial frequency; the
//                orientation and phase are drawn per sample
//
// Dataset file layout (little-endian):
//   "CLTD1" | u16 version | u32 N, C, H, W, num_classes |
//   N·C·H·W f64 pixels | N u32 labels

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cladapt/rng.hpp"
#include "cladapt/tensor.hpp"

namespace cladapt {

enum class DomainKind { generic, finegrained, texture };

std::string to_string(DomainKind kind);
DomainKind parse_domain_kind(std::string_view name);

struct SyntheticDomainSpec {
  DomainKind kind = DomainKind::generic;
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 30;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DomainDataset {
  std::string name;
  std::string split;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> pixels;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * height * width; }
  std::span<const double> image(std::size_t index) const;
  // Stacks the selected images into a [B×C×H×W] tensor.
  Tensor images(std::span<const std::size_t> indices) const;
  std::vector<std::uint32_t> labels_of(std::span<const std::size_t> indices) const;

  void validate() const;
  bool same_content(const DomainDataset& other) const;
};

struct DomainSplit {
  DomainDataset train;
  DomainDataset val;
};

// 80/20 per-class split; deterministic in spec.seed.
DomainSplit generate_domain(const SyntheticDomainSpec& spec, std::string name = {});

struct AugmentChoice {
  bool flip = false;
  unsigned quarter_turns = 0;
  int shift_x = 0;
  int shift_y = 0;
};

constexpr int kMaxJitter = 2;

AugmentChoice draw_augment(Rng& rng);
// Horizontal flip, then rotation by quarter turns, then a zero-padded shift.
std::vector<double> apply_augment(std::span<const double> image, std::size_t channels,
                                  std::size_t height, std::size_t width,
                                  const AugmentChoice& choice);
std::vector<double> augment(std::span<const double> image, std::size_t channels,
                            std::size_t height, std::size_t width, Rng& rng);

class FormatError : public Error {
 public:
  enum class Kind { bad_magic, truncated, version_mismatch, invalid };
  FormatError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

constexpr std::uint16_t kDatasetFormatVersion = 1;

void write_dataset(std::ostream& out, const DomainDataset& dataset);
DomainDataset read_dataset(std::istream& in);
void save_dataset(const DomainDataset& dataset, const std::filesystem::path& path);
DomainDataset load_dataset(const std::filesystem::path& path);

}  // namespace cladapt
