// Copyright 2026 The tigr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tigr {

using Shape = std::vector<std::size_t>;

/// Incompatible tensor shapes or sequence lengths.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Token id or row index outside the valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid configuration value. `key()` names the offending key when known.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg, std::string key = {})
      : std::invalid_argument(msg), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed input file. Carries the 1-based line number (0 when unknown).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t line = 0)
      : std::runtime_error(line ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated pre-condition of an internal contract (e.g. an all-padding sequence).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Contiguous run of rows [start, start + length) belonging to one sequence.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

using Segments = std::vector<Segment>;

inline Segments segments_from_lengths(const std::vector<std::size_t>& lengths) {
  Segments segs;
  segs.reserve(lengths.size());
  std::size_t offset = 0;
  for (auto len : lengths) {
    segs.push_back({offset, len});
    offset += len;
  }
  return segs;
}

inline std::size_t total_rows(const Segments& segs) {
  std::size_t n = 0;
  for (const auto& s : segs) n += s.length;
  return n;
}

}  // namespace tigr
