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

#ifndef CSILOC_CSI_DATA_HPP
#define CSILOC_CSI_DATA_HPP

#include <compare>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace csiloc {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// One packet's complex frequency response, (receive antenna x subcarrier),
/// stored row-major.
class ChannelResponse {
 public:
  ChannelResponse(std::size_t num_rx, std::size_t num_subcarriers,
                  std::vector<std::complex<float>> values);
  static ChannelResponse zeros(std::size_t num_rx, std::size_t num_subcarriers);

  std::size_t num_rx() const noexcept { return num_rx_; }
  std::size_t num_subcarriers() const noexcept { return num_subcarriers_; }
  std::complex<float> at(std::size_t antenna, std::size_t subcarrier) const {
    return values_[antenna * num_subcarriers_ + subcarrier];
  }
  std::span<const std::complex<float>> values() const noexcept { return values_; }

  /// Bitwise equality of every I and Q component.
  friend bool operator==(const ChannelResponse& a, const ChannelResponse& b);

 private:
  std::size_t num_rx_;
  std::size_t num_subcarriers_;
  std::vector<std::complex<float>> values_;
};

/// Real-valued fingerprint image, (channel, row, col) row-major.
///
/// Channel c is receive antenna c. Rows [0, N) of a channel hold the in-phase
/// parts of the N subcarriers, rows [N, 2N) the quadrature parts. Column t is
/// packet t.
class CSIImage {
 public:
  CSIImage(std::size_t channels, std::size_t height, std::size_t width, std::vector<float> pixels);

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  std::span<const float> pixels() const noexcept { return pixels_; }
  float at(std::size_t c, std::size_t row, std::size_t col) const {
    return pixels_[(c * height_ + row) * width_ + col];
  }

  friend bool operator==(const CSIImage& a, const CSIImage& b);

 private:
  std::size_t channels_;
  std::size_t height_;
  std::size_t width_;
  std::vector<float> pixels_;
};

struct RefPoint {
  int id = 0;
  int area_id = 0;
  Point2 location;  // meters, local frame of the area
  friend bool operator==(const RefPoint&, const RefPoint&) = default;
};

/// Provenance of one stored sample; lets tests prove which records reached a gradient.
struct SampleTag {
  int area = 0;
  int posture = 0;
  int rp = 0;
  int index = 0;
  friend auto operator<=>(const SampleTag&, const SampleTag&) = default;
};

/// A labelled fingerprint: the pair (csi image, coordinates).
struct FingerprintRecord {
  RefPoint rp;
  std::shared_ptr<const CSIImage> image;
  SampleTag tag;

  const Point2& label() const noexcept { return rp.location; }
};

CSIImage build_csi_image(std::span<const ChannelResponse> packets);
std::vector<ChannelResponse> image_to_responses(const CSIImage& image, std::size_t num_subcarriers);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct TaskKey {
  int area = 0;
  int posture = 0;
  friend auto operator<=>(const TaskKey&, const TaskKey&) = default;
};

/// "a<area>_p<posture>", the directory name of a task.
std::string task_name(const TaskKey& key);

struct NamedId {
  int id = 0;
  std::string name;
  friend bool operator==(const NamedId&, const NamedId&) = default;
};

struct DatasetManifest {
  int schema_version = 1;
  int n_packets = 0;
  int num_subcarriers = 0;
  int num_rx_antennas = 0;
  std::vector<NamedId> areas;
  std::vector<NamedId> postures;
  std::vector<RefPoint> rps;

  std::vector<RefPoint> rps_in_area(int area_id) const;
  const RefPoint& rp(int id) const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

using ImagePtr = std::shared_ptr<const CSIImage>;

/// All stored samples of one (area, posture) task, keyed by RP id.
struct TaskData {
  TaskKey key;
  std::map<int, std::vector<ImagePtr>> samples_by_rp;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<TaskData> tasks;

  const TaskData& task(const TaskKey& key) const;
  /// Every stored sample of a task as labelled records, in (rp, index) order.
  std::vector<FingerprintRecord> records(const TaskKey& key) const;
};

/// Bitwise comparison of manifests, task keys, and every pixel.
bool identical(const Dataset& a, const Dataset& b);

/// Encode / decode one `.csif` file: "CSIF", u32 version, u32 K, C, H, W,
/// then K*C*H*W little-endian float32 pixels in (sample, channel, row, col) order.
std::vector<std::uint8_t> encode_csif(std::span<const ImagePtr> samples);
std::vector<CSIImage> decode_csif(std::span<const std::uint8_t> bytes);

void write_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset read_dataset(const std::filesystem::path& root);

/// Per-channel affine input normalization (zero mean, unit variance).
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static ChannelStats identity(std::size_t channels);
  /// Statistics over every pixel of the given records, per channel.
  static ChannelStats fit(std::span<const FingerprintRecord> records);
};

}  // namespace csiloc

#endif  // CSILOC_CSI_DATA_HPP
