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

#ifndef CSILOC_PARAM_SET_HPP
#define CSILOC_PARAM_SET_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace csiloc {

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size() const;
};

/// Named parameter arrays in declaration order, stored contiguously.
///
/// Two ParamSets are combinable when their layouts are equal (same names and
/// shapes in the same order).
class ParamSet {
 public:
  struct Layout {
    std::vector<ParamBlock> blocks;
    std::size_t total = 0;
    const ParamBlock& block(const std::string& name) const;
    bool operator==(const Layout& other) const;
  };

  ParamSet() = default;
  /// Zero-filled parameters with the given named shapes.
  static ParamSet zeros(const std::vector<std::pair<std::string, std::vector<std::size_t>>>& shapes);
  static ParamSet zeros_like(const ParamSet& other);

  std::size_t size() const noexcept { return values_.size(); }
  const Layout& layout() const noexcept { return *layout_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> operator[](const std::string& name);
  std::span<const double> operator[](const std::string& name) const;

  bool same_layout(const ParamSet& other) const;

  /// this += scale * other
  ParamSet& axpy(double scale, const ParamSet& other);
  ParamSet& scale(double factor);
  double dot(const ParamSet& other) const;
  double norm() const;
  double max_abs() const;
  bool all_finite() const;
  /// FNV-1a over the raw bytes of every value.
  std::uint64_t checksum() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

ParamSet operator+(ParamSet a, const ParamSet& b);
ParamSet operator-(ParamSet a, const ParamSet& b);
ParamSet operator*(double s, ParamSet a);

/// Checkpoint file: "CSIP", u32 version, u32 header length, a JSON header
/// {"layers": [{"name", "shape"}]}, then every value as little-endian float32.
std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace csiloc

#endif  // CSILOC_PARAM_SET_HPP
