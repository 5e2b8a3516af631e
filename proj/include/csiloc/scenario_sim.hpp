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

// Synthetic multi-area, multi-posture CSI fingerprint generator.
//
// Every link is a sum of discrete paths. Path 0 is line of sight from a
// per-area virtual transmitter; paths 1.. come from per-area image sources.
// A path's delay is its source-to-RP distance over c plus a fixed excess
// delay, and its amplitude decays with both delay and distance. Each antenna
// sees the same geometry with its own fixed per-path phase. A posture applies
// a fixed, seeded multiplicative gain, phase, and delay perturbation to each
// path, scaled by `posture_perturbation`. Packets differ only by i.i.d.
// complex Gaussian noise.

#ifndef CSILOC_SCENARIO_SIM_HPP
#define CSILOC_SCENARIO_SIM_HPP

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csiloc/csi_data.hpp"

namespace csiloc {

struct SubareaLayout {
  std::string name;
  int rows = 3;
  int cols = 3;
  double spacing_m = 0.6;
};

/// Overrides the posture perturbation of one (area, posture) task.
struct PerturbationOverride {
  int area = 0;
  int posture = 0;
  double posture_perturbation = 0.0;
};

struct ScenarioConfig {
  std::vector<SubareaLayout> subareas;
  std::vector<int> postures;
  int num_paths = 6;
  double noise_std = 0.02;
  double posture_perturbation = 0.3;
  std::vector<PerturbationOverride> overrides;
  std::uint64_t seed = 2024;
  int n_packets = 60;
  int num_subcarriers = 30;
  int num_rx = 3;
  int samples_per_rp = 24;

  int num_subareas() const { return static_cast<int>(subareas.size()); }
  double perturbation_for(const TaskKey& key) const;
  /// One message per offending field; empty when valid.
  std::vector<std::string> validate() const;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

/// Five 3x3 subareas (0.6 m spacing for areas 1-4, 2.0 m for area 5), five
/// postures, 60 packets of 30 subcarriers on 3 receive antennas.
ScenarioConfig reference_scenario();

/// Generates one task group per (subarea, posture). Areas are numbered from 1.
Dataset generate_scenario(const ScenarioConfig& config);

struct PathComponent {
  std::complex<double> gain;
  double delay_s = 0.0;
};

/// H(f) = sum_l a_l exp(-j 2 pi f tau_l) at each baseband frequency offset.
std::vector<std::complex<double>> multipath_response(std::span<const PathComponent> paths,
                                                     std::span<const double> frequencies_hz);

/// Baseband offsets of the reported subcarriers. For 30 subcarriers these are
/// the grouped 20 MHz indices {-28, -26, ..., -2, -1, 1, 3, ..., 27, 28} times
/// 312.5 kHz; other counts are spaced evenly over the same band.
std::vector<double> subcarrier_offsets_hz(int num_subcarriers);

}  // namespace csiloc

#endif  // CSILOC_SCENARIO_SIM_HPP
