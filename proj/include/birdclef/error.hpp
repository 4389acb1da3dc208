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

#include <stdexcept>
#include <string>

namespace birdclef {

// Base of every error raised by the library. The CLI maps subclasses to
// process exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user configuration, unknown keys, violated preconditions on settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// WAV decoding failures. The kind distinguishes the causes callers care about.
class AudioError : public DataError {
 public:
  enum class Kind { kUnreadable, kUnsupportedFormat, kEmptyData };
  AudioError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Binary file format problems (.bspc spectrograms and checkpoints).
class FormatError : public DataError {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kShapeMismatch, kIo };
  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Tensor shape contract violations inside the network code.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace birdclef
