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
#include "cladapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"

namespace cladapt {

namespace {

constexpr char kDatasetMagic[] = "CLTD1";

// Smooth random pattern: a sum of Gaussian blobs, min-max scaled to [lo, hi].
std::vector<double> blob_pattern(Rng& rng, std::size_t size, int blobs, double lo, double hi) {
  std::vector<double> out(size * size, 0.0);
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform() * static_cast<double>(size);
    const double cy = rng.uniform() * static_cast<double>(size);
    const double sigma = 1.5 + 2.0 * rng.uniform();
    const double amp = 2.0 * rng.uniform() - 1.0;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        out[y * size + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
    }
  }
  const auto [mn, mx] = std::minmax_element(out.begin(), out.end());
  const double lo_v = *mn, span = *mx - *mn;
  for (auto& v : out) v = span > 0.0 ? lo + (hi - lo) * (v - lo_v) / span : 0.5 * (lo + hi);
  return out;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::string to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::generic: return "generic";
    case DomainKind::finegrained: return "finegrained";
    case DomainKind::texture: return "texture";
  }
  return "unknown";
}

DomainKind parse_domain_kind(std::string_view name) {
  if (name == "generic") return DomainKind::generic;
  if (name == "finegrained") return DomainKind::finegrained;
  if (name == "texture") return DomainKind::texture;
  throw Error("unknown domain kind '" + std::string(name) + "'");
}

void SyntheticDomainSpec::validate() const {
  if (num_classes == 0) throw Error("domain spec: num_classes must be positive");
  if (samples_per_class == 0) throw Error("domain spec: samples_per_class must be positive");
  if (image_size == 0 || channels == 0) throw Error("domain spec: empty image geometry");
  if (noise < 0.0) throw Error("domain spec: noise must be non-negative");
}

std::span<const double> DomainDataset::image(std::size_t index) const {
  const std::size_t n = image_numel();
  return std::span<const double>(pixels).subspan(index * n, n);
}

Tensor DomainDataset::images(std::span<const std::size_t> indices) const {
  const std::size_t n = image_numel();
  std::vector<double> out;
  out.reserve(indices.size() * n);
  for (auto i : indices) {
    auto img = image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor({indices.size(), channels, height, width}, std::move(out));
}

std::vector<std::uint32_t> DomainDataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<std::uint32_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

void DomainDataset::validate() const {
  if (pixels.size() != labels.size() * image_numel()) {
    throw Error("dataset '" + name + "': pixel count does not match " +
                std::to_string(labels.size()) + " images");
  }
  for (auto label : labels) {
    if (label >= num_classes) {
      throw Error("dataset '" + name + "': label " + std::to_string(label) + " out of range");
    }
  }
}

bool DomainDataset::same_content(const DomainDataset& other) const {
  return channels == other.channels && height == other.height && width == other.width &&
         num_classes == other.num_classes && pixels == other.pixels && labels == other.labels;
}

DomainSplit generate_domain(const SyntheticDomainSpec& spec, std::string name) {
  spec.validate();
  if (name.empty()) name = to_string(spec.kind);
  const std::size_t size = spec.image_size, per_image = spec.channels * size * size;
  Rng rng(spec.seed);

  // Prototypes per class and channel (unused for textures).
  std::vector<std::vector<double>> prototypes(spec.num_classes * spec.channels);
  if (spec.kind == DomainKind::generic) {
    for (auto& p : prototypes) p = blob_pattern(rng, size, 4, 0.15, 0.85);
  } else if (spec.kind == DomainKind::finegrained) {
    std::vector<std::vector<double>> base(spec.channels);
    for (auto& b : base) b = blob_pattern(rng, size, 4, 0.2, 0.8);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        auto delta = blob_pattern(rng, size, 2, -0.15, 0.15);
        auto& p = prototypes[c * spec.channels + ch];
        p = base[ch];
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += delta[i];
      }
    }
  }

  const std::size_t train_per_class = spec.samples_per_class * 4 / 5;
  DomainSplit split;
  for (DomainDataset* part : {&split.train, &split.val}) {
    part->name = name;
    part->channels = spec.channels;
    part->height = size;
    part->width = size;
    part->num_classes = spec.num_classes;
  }
  split.train.split = "train";
  split.val.split = "val";

  std::vector<double> img(per_image);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      if (spec.kind == DomainKind::texture) {
        const double freq = spec.num_classes > 1
                                ? 0.08 + 0.24 * static_cast<double>(c) /
                                             static_cast<double>(spec.num_classes - 1)
                                : 0.2;
        const double theta = M_PI * rng.uniform();
        const double phase = 2.0 * M_PI * rng.uniform();
        const double ct = std::cos(theta), st = std::sin(theta);
        for (std::size_t ch = 0; ch < spec.channels; ++ch)
          for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
              const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
              const double v = 0.5 + 0.35 * std::sin(2.0 * M_PI * freq * u + phase);
              img[(ch * size + y) * size + x] = clamp01(v + spec.noise * rng.normal());
            }
      } else {
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
          const auto& p = prototypes[c * spec.channels + ch];
          for (std::size_t i = 0; i < size * size; ++i) {
            img[ch * size * size + i] = clamp01(p[i] + spec.noise * rng.normal());
          }
        }
      }
      DomainDataset& dst = s < train_per_class ? split.train : split.val;
      dst.pixels.insert(dst.pixels.end(), img.begin(), img.end());
      dst.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return split;
}

AugmentChoice draw_augment(Rng& rng) {
  AugmentChoice choice;
  choice.flip = rng.uniform() < 0.5;
  choice.quarter_turns = static_cast<unsigned>(rng.below(4));
  choice.shift_x = static_cast<int>(rng.below(2 * kMaxJitter + 1)) - kMaxJitter;
  choice.shift_y = static_cast<int>(rng.below(2 * kMaxJitter + 1)) - kMaxJitter;
  return choice;
}

std::vector<double> apply_augment(std::span<const double> image, std::size_t channels,
                                  std::size_t height, std::size_t width,
                                  const AugmentChoice& choice) {
  const std::size_t plane = height * width;
  std::vector<double> cur(image.begin(), image.end());
  if (choice.flip) {
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < height; ++y)
        std::reverse(cur.begin() + static_cast<std::ptrdiff_t>(ch * plane + y * width),
                     cur.begin() + static_cast<std::ptrdiff_t>(ch * plane + (y + 1) * width));
  }
  // Quarter turns need square planes; a half turn works for any geometry.
  unsigned turns = choice.quarter_turns % 4;
  if (height != width && turns % 2 == 1) turns = 0;
  for (unsigned t = 0; t < turns; ++t) {
    std::vector<double> next(cur.size());
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          // 90° clockwise: (y, x) -> (x, H-1-y), valid because H == W or turns is even.
          next[ch * plane + x * width + (height - 1 - y)] = cur[ch * plane + y * width + x];
        }
    cur.swap(next);
  }
  if (choice.shift_x != 0 || choice.shift_y != 0) {
    std::vector<double> next(cur.size(), 0.0);
    const auto h = static_cast<long>(height), w = static_cast<long>(width);
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
          const long sy = y - choice.shift_y, sx = x - choice.shift_x;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
          next[ch * plane + static_cast<std::size_t>(y * w + x)] =
              cur[ch * plane + static_cast<std::size_t>(sy * w + sx)];
        }
    cur.swap(next);
  }
  return cur;
}

std::vector<double> augment(std::span<const double> image, std::size_t channels,
                            std::size_t height, std::size_t width, Rng& rng) {
  return apply_augment(image, channels, height, width, draw_augment(rng));
}

void write_dataset(std::ostream& out, const DomainDataset& dataset) {
  dataset.validate();
  out.write(kDatasetMagic, 5);
  io::put_le<std::uint16_t>(out, kDatasetFormatVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.size()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.channels));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.height));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.width));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.num_classes));
  for (double v : dataset.pixels) io::put_f64(out, v);
  for (auto label : dataset.labels) io::put_le<std::uint32_t>(out, label);
}

DomainDataset read_dataset(std::istream& in) {
  io::Reader reader(in, "dataset");
  reader.expect_magic(std::string_view(kDatasetMagic, 5));
  const auto version = reader.le<std::uint16_t>();
  if (version != kDatasetFormatVersion) {
    throw FormatError(FormatError::Kind::version_mismatch,
                      "dataset: unsupported version " + std::to_string(version));
  }
  DomainDataset ds;
  const std::size_t n = reader.le<std::uint32_t>();
  ds.channels = reader.le<std::uint32_t>();
  ds.height = reader.le<std::uint32_t>();
  ds.width = reader.le<std::uint32_t>();
  ds.num_classes = reader.le<std::uint32_t>();
  ds.pixels.resize(n * ds.image_numel());
  for (auto& v : ds.pixels) v = reader.f64();
  ds.labels.resize(n);
  for (auto& label : ds.labels) label = reader.le<std::uint32_t>();
  for (auto label : ds.labels) {
    if (label >= ds.num_classes) {
      throw FormatError(FormatError::Kind::invalid, "dataset: label out of range");
    }
  }
  return ds;
}

void save_dataset(const DomainDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_dataset(out, dataset);
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  DomainDataset ds = read_dataset(in);
  ds.name = path.stem().string();
  return ds;
}

}  // namespace cladapt
