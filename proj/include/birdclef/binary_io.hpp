/*
 * Copyright 2026 The birdclef-baseline Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "birdclef/error.hpp"

// Little-endian primitives shared by the .bspc and checkpoint formats.
namespace birdclef::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_bytes(std::ostream& os, std::string_view s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_string(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s);
}

inline void write_f32(std::ostream& os, std::span<const float> values) {
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size_bytes()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const std::string& what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(FormatError::Kind::kTruncated, "truncated file while reading " + what);
  }
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  read_exact(is, reinterpret_cast<char*>(&v), sizeof v, what);
  return v;
}

inline std::string read_string(std::istream& is, const std::string& what,
                               std::uint32_t max_len = 1u << 24) {
  const std::uint32_t n = read_u32(is, what + " length");
  if (n > max_len) {
    throw FormatError(FormatError::Kind::kTruncated, "implausible length for " + what);
  }
  std::string s(n, '\0');
  if (n > 0) read_exact(is, s.data(), n, what);
  return s;
}

inline void read_f32(std::istream& is, std::span<float> dst, const std::string& what) {
  read_exact(is, reinterpret_cast<char*>(dst.data()), dst.size_bytes(), what);
}

}  // namespace birdclef::binio
