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

// Little-endian primitives shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cladapt/data.hpp"

namespace cladapt::io {

template <typename U>
void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

inline void put_f64(std::ostream& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(FormatError::Kind::truncated, what_ + ": unexpected end of file");
    }
  }

  template <typename U>
  U le() {
    unsigned char raw[sizeof(U)];
    bytes(reinterpret_cast<char*>(raw), sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(raw[i]) << (8 * i);
    return value;
  }

  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(magic.size()));
    const auto n = static_cast<std::size_t>(in_.gcount());
    if (n == 0) throw FormatError(FormatError::Kind::truncated, what_ + ": empty file");
    if (got.substr(0, n) != magic.substr(0, n)) {
      throw FormatError(FormatError::Kind::bad_magic, what_ + ": bad magic");
    }
    if (n != magic.size()) throw FormatError(FormatError::Kind::truncated, what_ + ": truncated header");
  }

 private:
  std::istream& in_;
  std::string what_;
};

}  // namespace cladapt::io
