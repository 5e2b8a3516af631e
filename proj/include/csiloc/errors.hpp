// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CSILOC_ERRORS_HPP
#define CSILOC_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace csiloc {

/// Tensor or image dimensions disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk payload; carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// The dataset cannot satisfy a sampling or evaluation request.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss became non-finite or exceeded the divergence limit.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& where, int step, double value)
      : std::runtime_error(where + ": divergence at step " + std::to_string(step) +
                           " (loss " + std::to_string(value) + ")"),
        step_(step),
        value_(value) {}
  int step() const noexcept { return step_; }
  double value() const noexcept { return value_; }

 private:
  int step_;
  double value_;
};

}  // namespace csiloc

#endif  // CSILOC_ERRORS_HPP
