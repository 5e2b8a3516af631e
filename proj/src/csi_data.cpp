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

#include "csiloc/csi_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <json.hpp>

#include "csiloc/errors.hpp"

namespace csiloc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

ChannelResponse::ChannelResponse(std::size_t num_rx, std::size_t num_subcarriers,
                                 std::vector<std::complex<float>> values)
    : num_rx_(num_rx), num_subcarriers_(num_subcarriers), values_(std::move(values)) {
  if (num_rx_ == 0 || num_subcarriers_ == 0)
    throw ShapeError("ChannelResponse: need at least one antenna and one subcarrier");
  if (values_.size() != num_rx_ * num_subcarriers_)
    throw ShapeError("ChannelResponse: expected " + std::to_string(num_rx_ * num_subcarriers_) +
                     " values, got " + std::to_string(values_.size()));
  for (const auto& h : values_) {
    if (!std::isfinite(h.real()) || !std::isfinite(h.imag()))
      throw std::invalid_argument("ChannelResponse: non-finite channel gain");
  }
}

ChannelResponse ChannelResponse::zeros(std::size_t num_rx, std::size_t num_subcarriers) {
  return ChannelResponse(num_rx, num_subcarriers,
                         std::vector<std::complex<float>>(num_rx * num_subcarriers));
}

bool operator==(const ChannelResponse& a, const ChannelResponse& b) {
  return a.num_rx_ == b.num_rx_ && a.num_subcarriers_ == b.num_subcarriers_ &&
         std::memcmp(a.values_.data(), b.values_.data(),
                     a.values_.size() * sizeof(std::complex<float>)) == 0;
}

CSIImage::CSIImage(std::size_t channels, std::size_t height, std::size_t width,
                   std::vector<float> pixels)
    : channels_(channels), height_(height), width_(width), pixels_(std::move(pixels)) {
  if (channels_ == 0 || height_ == 0 || width_ == 0) throw ShapeError("CSIImage: empty dimension");
  if (pixels_.size() != channels_ * height_ * width_)
    throw ShapeError("CSIImage: pixel count does not match shape");
  for (const float p : pixels_) {
    if (!std::isfinite(p)) throw std::invalid_argument("CSIImage: non-finite pixel");
  }
}

bool operator==(const CSIImage& a, const CSIImage& b) {
  return a.channels_ == b.channels_ && a.height_ == b.height_ && a.width_ == b.width_ &&
         std::memcmp(a.pixels_.data(), b.pixels_.data(), a.pixels_.size() * sizeof(float)) == 0;
}

CSIImage build_csi_image(std::span<const ChannelResponse> packets) {
  if (packets.empty()) throw std::invalid_argument("build_csi_image: no packets");
  const std::size_t num_rx = packets.front().num_rx();
  const std::size_t num_sc = packets.front().num_subcarriers();
  for (const auto& p : packets) {
    if (p.num_rx() != num_rx || p.num_subcarriers() != num_sc)
      throw ShapeError("build_csi_image: packets have mismatched shapes");
  }
  const std::size_t height = 2 * num_sc;
  const std::size_t width = packets.size();
  std::vector<float> pixels(num_rx * height * width);
  for (std::size_t t = 0; t < width; ++t) {
    for (std::size_t a = 0; a < num_rx; ++a) {
      float* channel = pixels.data() + a * height * width;
      for (std::size_t n = 0; n < num_sc; ++n) {
        const auto h = packets[t].at(a, n);
        channel[n * width + t] = h.real();
        channel[(num_sc + n) * width + t] = h.imag();
      }
    }
  }
  return CSIImage(num_rx, height, width, std::move(pixels));
}

std::vector<ChannelResponse> image_to_responses(const CSIImage& image, std::size_t num_subcarriers) {
  if (image.height() % 2 != 0)
    throw ShapeError("image_to_responses: image height must be even");
  if (image.height() != 2 * num_subcarriers)
    throw ShapeError("image_to_responses: image height is not twice the subcarrier count");
  std::vector<ChannelResponse> packets;
  packets.reserve(image.width());
  for (std::size_t t = 0; t < image.width(); ++t) {
    std::vector<std::complex<float>> values(image.channels() * num_subcarriers);
    for (std::size_t a = 0; a < image.channels(); ++a) {
      for (std::size_t n = 0; n < num_subcarriers; ++n) {
        values[a * num_subcarriers + n] = {image.at(a, n, t), image.at(a, num_subcarriers + n, t)};
      }
    }
    packets.emplace_back(image.channels(), num_subcarriers, std::move(values));
  }
  return packets;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

std::string task_name(const TaskKey& key) {
  return "a" + std::to_string(key.area) + "_p" + std::to_string(key.posture);
}

std::vector<RefPoint> DatasetManifest::rps_in_area(int area_id) const {
  std::vector<RefPoint> out;
  for (const auto& rp : rps) {
    if (rp.area_id == area_id) out.push_back(rp);
  }
  return out;
}

const RefPoint& DatasetManifest::rp(int id) const {
  for (const auto& r : rps) {
    if (r.id == id) return r;
  }
  throw DataError("unknown reference point id " + std::to_string(id));
}

const TaskData& Dataset::task(const TaskKey& key) const {
  for (const auto& t : tasks) {
    if (t.key == key) return t;
  }
  throw DataError("dataset has no task " + task_name(key));
}

std::vector<FingerprintRecord> Dataset::records(const TaskKey& key) const {
  const TaskData& data = task(key);
  std::vector<FingerprintRecord> out;
  for (const auto& [rp_id, images] : data.samples_by_rp) {
    const RefPoint& rp = manifest.rp(rp_id);
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.push_back({rp, images[i], {key.area, key.posture, rp_id, static_cast<int>(i)}});
    }
  }
  return out;
}

bool identical(const Dataset& a, const Dataset& b) {
  if (!(a.manifest == b.manifest) || a.tasks.size() != b.tasks.size()) return false;
  for (std::size_t t = 0; t < a.tasks.size(); ++t) {
    const auto& ta = a.tasks[t];
    const auto& tb = b.tasks[t];
    if (!(ta.key == tb.key) || ta.samples_by_rp.size() != tb.samples_by_rp.size()) return false;
    for (const auto& [rp, images] : ta.samples_by_rp) {
      const auto it = tb.samples_by_rp.find(rp);
      if (it == tb.samples_by_rp.end() || it->second.size() != images.size()) return false;
      for (std::size_t i = 0; i < images.size(); ++i) {
        if (!(*images[i] == *it->second[i])) return false;
      }
    }
  }
  return true;
}

namespace {

constexpr char kMagic[4] = {'C', 'S', 'I', 'F'};
constexpr std::uint32_t kCsifVersion = 1;
constexpr std::size_t kCsifHeaderBytes = 24;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["schema_version"] = m.schema_version;
  j["N_t"] = m.n_packets;
  j["num_subcarriers"] = m.num_subcarriers;
  j["num_rx_antennas"] = m.num_rx_antennas;
  j["areas"] = json::array();
  for (const auto& a : m.areas) j["areas"].push_back({{"id", a.id}, {"name", a.name}});
  j["postures"] = json::array();
  for (const auto& p : m.postures) j["postures"].push_back({{"id", p.id}, {"name", p.name}});
  j["rps"] = json::array();
  for (const auto& rp : m.rps) {
    j["rps"].push_back(
        {{"id", rp.id}, {"area_id", rp.area_id}, {"x_m", rp.location.x}, {"y_m", rp.location.y}});
  }
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1)
    throw FormatError("manifest.json: unsupported schema_version " + std::to_string(m.schema_version), 0);
  m.n_packets = j.at("N_t").get<int>();
  m.num_subcarriers = j.at("num_subcarriers").get<int>();
  m.num_rx_antennas = j.at("num_rx_antennas").get<int>();
  for (const auto& a : j.at("areas")) m.areas.push_back({a.at("id").get<int>(), a.at("name").get<std::string>()});
  for (const auto& p : j.at("postures"))
    m.postures.push_back({p.at("id").get<int>(), p.at("name").get<std::string>()});
  for (const auto& rp : j.at("rps")) {
    m.rps.push_back({rp.at("id").get<int>(), rp.at("area_id").get<int>(),
                     {rp.at("x_m").get<double>(), rp.at("y_m").get<double>()}});
  }
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_csif(std::span<const ImagePtr> samples) {
  if (samples.empty()) throw std::invalid_argument("encode_csif: no samples");
  const CSIImage& first = *samples.front();
  std::vector<std::uint8_t> out;
  out.reserve(kCsifHeaderBytes + samples.size() * first.size() * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kCsifVersion);
  put_u32(out, static_cast<std::uint32_t>(samples.size()));
  put_u32(out, static_cast<std::uint32_t>(first.channels()));
  put_u32(out, static_cast<std::uint32_t>(first.height()));
  put_u32(out, static_cast<std::uint32_t>(first.width()));
  for (const auto& img : samples) {
    if (img->channels() != first.channels() || img->height() != first.height() ||
        img->width() != first.width())
      throw ShapeError("encode_csif: samples have mismatched shapes");
    for (const float p : img->pixels()) put_u32(out, std::bit_cast<std::uint32_t>(p));
  }
  return out;
}

std::vector<CSIImage> decode_csif(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCsifHeaderBytes)
    throw FormatError("csif: truncated header", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("csif: bad magic", 0);
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCsifVersion)
    throw FormatError("csif: unsupported version " + std::to_string(version), 4);
  const std::uint64_t k = get_u32(bytes, 8);
  const std::uint64_t c = get_u32(bytes, 12);
  const std::uint64_t h = get_u32(bytes, 16);
  const std::uint64_t w = get_u32(bytes, 20);
  if (k == 0 || c == 0 || h == 0 || w == 0) throw FormatError("csif: zero dimension in header", 8);
  const std::uint64_t per_image = c * h * w;
  const std::uint64_t needed = k * per_image * 4;
  const std::uint64_t available = bytes.size() - kCsifHeaderBytes;
  if (needed > available) {
    throw FormatError("csif: truncated payload, header declares " + std::to_string(needed) +
                          " bytes but only " + std::to_string(available) + " remain",
                      bytes.size());
  }
  if (needed < available) throw FormatError("csif: trailing bytes after payload", kCsifHeaderBytes + needed);
  std::vector<CSIImage> images;
  images.reserve(k);
  std::size_t offset = kCsifHeaderBytes;
  for (std::uint64_t s = 0; s < k; ++s) {
    std::vector<float> pixels(per_image);
    for (auto& p : pixels) {
      p = std::bit_cast<float>(get_u32(bytes, offset));
      if (!std::isfinite(p)) throw FormatError("csif: non-finite pixel", offset);
      offset += 4;
    }
    images.emplace_back(c, h, w, std::move(pixels));
  }
  return images;
}

void write_dataset(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root / "tasks");
  const std::string manifest = manifest_to_json(dataset.manifest).dump(2) + "\n";
  write_file(root / "manifest.json",
             std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
  for (const auto& task : dataset.tasks) {
    const fs::path dir = root / "tasks" / task_name(task.key);
    fs::create_directories(dir);
    for (const auto& [rp_id, images] : task.samples_by_rp) {
      write_file(dir / ("rp" + std::to_string(rp_id) + ".csif"), encode_csif(images));
    }
  }
}

Dataset read_dataset(const fs::path& root) {
  Dataset dataset;
  {
    const auto bytes = read_file(root / "manifest.json");
    json j;
    try {
      j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("manifest.json: ") + e.what(), e.byte);
    }
    dataset.manifest = manifest_from_json(j);
  }
  const DatasetManifest& m = dataset.manifest;
  for (const auto& area : m.areas) {
    const auto rps = m.rps_in_area(area.id);
    for (const auto& posture : m.postures) {
      TaskData task{{area.id, posture.id}, {}};
      const fs::path dir = root / "tasks" / task_name(task.key);
      if (!fs::exists(dir)) continue;
      for (const auto& rp : rps) {
        const fs::path file = dir / ("rp" + std::to_string(rp.id) + ".csif");
        if (!fs::exists(file)) continue;
        std::vector<CSIImage> decoded;
        try {
          decoded = decode_csif(read_file(file));
        } catch (const FormatError& e) {
          throw FormatError(file.string() + ": " + e.what(), e.offset());
        }
        auto& slot = task.samples_by_rp[rp.id];
        for (auto& img : decoded) {
          if (img.channels() != static_cast<std::size_t>(m.num_rx_antennas) ||
              img.height() != static_cast<std::size_t>(2 * m.num_subcarriers) ||
              img.width() != static_cast<std::size_t>(m.n_packets))
            throw ShapeError(file.string() + ": image shape disagrees with manifest");
          slot.push_back(std::make_shared<const CSIImage>(std::move(img)));
        }
      }
      if (!task.samples_by_rp.empty()) dataset.tasks.push_back(std::move(task));
    }
  }
  return dataset;
}

ChannelStats ChannelStats::identity(std::size_t channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

ChannelStats ChannelStats::fit(std::span<const FingerprintRecord> records) {
  if (records.empty()) throw std::invalid_argument("ChannelStats::fit: no records");
  const std::size_t channels = records.front().image->channels();
  const std::size_t plane = records.front().image->height() * records.front().image->width();
  std::vector<double> sum(channels, 0.0), sum_sq(channels, 0.0);
  for (const auto& r : records) {
    if (r.image->channels() != channels) throw ShapeError("ChannelStats::fit: channel mismatch");
    const auto px = r.image->pixels();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = px[c * plane + i];
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    }
  }
  const double count = static_cast<double>(records.size() * plane);
  ChannelStats stats;
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(sum_sq[c] / count - mean * mean, 0.0);
    stats.mean.push_back(mean);
    stats.stddev.push_back(var > 0.0 ? std::sqrt(var) : 1.0);
  }
  return stats;
}

}  // namespace csiloc
