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

#include "csiloc/param_set.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "csiloc/errors.hpp"

namespace csiloc {

std::size_t ParamBlock::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

const ParamBlock& ParamSet::Layout::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw std::out_of_range("ParamSet: no parameter named '" + name + "'");
}

bool ParamSet::Layout::operator==(const Layout& other) const {
  if (blocks.size() != other.blocks.size()) return false;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name != other.blocks[i].name || blocks[i].shape != other.blocks[i].shape) return false;
  }
  return true;
}

ParamSet ParamSet::zeros(const std::vector<std::pair<std::string, std::vector<std::size_t>>>& shapes) {
  auto layout = std::make_shared<Layout>();
  for (const auto& [name, shape] : shapes) {
    ParamBlock b{name, shape, layout->total};
    layout->total += b.size();
    layout->blocks.push_back(std::move(b));
  }
  ParamSet p;
  p.values_.assign(layout->total, 0.0);
  p.layout_ = std::move(layout);
  return p;
}

ParamSet ParamSet::zeros_like(const ParamSet& other) {
  ParamSet p;
  p.layout_ = other.layout_;
  p.values_.assign(other.values_.size(), 0.0);
  return p;
}

std::span<double> ParamSet::operator[](const std::string& name) {
  const ParamBlock& b = layout_->block(name);
  return std::span<double>(values_).subspan(b.offset, b.size());
}

std::span<const double> ParamSet::operator[](const std::string& name) const {
  const ParamBlock& b = layout_->block(name);
  return std::span<const double>(values_).subspan(b.offset, b.size());
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

ParamSet& ParamSet::axpy(double s, const ParamSet& other) {
  if (!same_layout(other)) throw ShapeError("ParamSet::axpy: layouts differ");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
  return *this;
}

ParamSet& ParamSet::scale(double factor) {
  for (auto& v : values_) v *= factor;
  return *this;
}

double ParamSet::dot(const ParamSet& other) const {
  if (!same_layout(other)) throw ShapeError("ParamSet::dot: layouts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * other.values_[i];
  return s;
}

double ParamSet::norm() const { return std::sqrt(dot(*this)); }

double ParamSet::max_abs() const {
  double m = 0.0;
  for (const double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool ParamSet::all_finite() const {
  for (const double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values_.data());
  for (std::size_t i = 0; i < values_.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  return a.same_layout(b) && a.values_ == b.values_;
}

ParamSet operator+(ParamSet a, const ParamSet& b) { return std::move(a.axpy(1.0, b)); }
ParamSet operator-(ParamSet a, const ParamSet& b) { return std::move(a.axpy(-1.0, b)); }
ParamSet operator*(double s, ParamSet a) { return std::move(a.scale(s)); }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'S', 'I', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
  nlohmann::json header;
  header["layers"] = nlohmann::json::array();
  for (const auto& b : params.layout().blocks) header["layers"].push_back({{"name", b.name}, {"shape", b.shape}});
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const double v : params.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw FormatError("checkpoint: truncated header", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic", 0);
  if (get_u32(bytes, 4) != kVersion) throw FormatError("checkpoint: unsupported version", 4);
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + header_len) throw FormatError("checkpoint: truncated layer manifest", bytes.size());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 12 + e.byte);
  }
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
  for (const auto& layer : header.at("layers")) {
    shapes.emplace_back(layer.at("name").get<std::string>(), layer.at("shape").get<std::vector<std::size_t>>());
  }
  ParamSet p = ParamSet::zeros(shapes);
  std::size_t offset = 12 + header_len;
  if (bytes.size() - offset != p.size() * 4) {
    throw FormatError("checkpoint: payload holds " + std::to_string((bytes.size() - offset) / 4) +
                          " values, manifest declares " + std::to_string(p.size()),
                      offset);
  }
  for (double& v : p.values()) {
    v = std::bit_cast<float>(get_u32(bytes, offset));
    offset += 4;
  }
  return p;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace csiloc
