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

#include "csiloc/scenario_sim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "csiloc/rng.hpp"

namespace csiloc {

namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kToneSpacingHz = 312.5e3;
constexpr double kDelaySpreadS = 25e-9;
constexpr double kPostureDelayScaleS = 5e-9;

// Substream tags.
enum : std::uint64_t { kTagGeometry = 1, kTagPosture = 2, kTagNoise = 3 };

struct Source {
  Point2 position;
  double excess_delay_s = 0.0;
  double weight = 1.0;
};

struct AreaGeometry {
  std::vector<Source> sources;             // one per path
  std::vector<std::vector<double>> phase;  // [antenna][path]
};

struct PosturePerturbation {
  std::vector<double> log_gain;  // per path, unit scale
  std::vector<double> phase;
  std::vector<double> delay;
};

AreaGeometry area_geometry(const ScenarioConfig& cfg, int area) {
  Rng rng = Rng(cfg.seed).substream({kTagGeometry, static_cast<std::uint64_t>(area)});
  const SubareaLayout& layout = cfg.subareas[static_cast<std::size_t>(area - 1)];
  const Point2 centre{0.5 * (layout.cols - 1) * layout.spacing_m,
                      0.5 * (layout.rows - 1) * layout.spacing_m};
  const double extent = std::max(layout.cols - 1, layout.rows - 1) * layout.spacing_m;
  AreaGeometry g;
  for (int l = 0; l < cfg.num_paths; ++l) {
    Source s;
    if (l == 0) {
      // Line-of-sight transmitter just outside one corner of the area.
      s.position = {-1.0 - rng.uniform(0.0, 0.5 + 0.5 * extent),
                    -1.0 - rng.uniform(0.0, 0.5 + 0.5 * extent)};
    } else {
      const double radius = extent + rng.uniform(2.0, 8.0);
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      s.position = {centre.x + radius * std::cos(angle), centre.y + radius * std::sin(angle)};
      s.excess_delay_s = rng.uniform(0.0, 40e-9);
      s.weight = rng.uniform(0.3, 0.9);
    }
    g.sources.push_back(s);
  }
  g.phase.assign(static_cast<std::size_t>(cfg.num_rx), std::vector<double>(g.sources.size()));
  for (auto& per_antenna : g.phase) {
    for (auto& p : per_antenna) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return g;
}

PosturePerturbation posture_perturbation(const ScenarioConfig& cfg, int area, int posture) {
  Rng rng = Rng(cfg.seed).substream({kTagPosture, static_cast<std::uint64_t>(posture),
                                     static_cast<std::uint64_t>(area)});
  PosturePerturbation p;
  for (int l = 0; l < cfg.num_paths; ++l) {
    p.log_gain.push_back(rng.normal());
    p.phase.push_back(rng.normal());
    p.delay.push_back(rng.normal());
  }
  return p;
}

std::vector<PathComponent> link_paths(const AreaGeometry& g, const PosturePerturbation& pert,
                                      double scale, std::size_t antenna, const Point2& rp) {
  std::vector<PathComponent> paths;
  paths.reserve(g.sources.size());
  for (std::size_t l = 0; l < g.sources.size(); ++l) {
    const Source& s = g.sources[l];
    const double distance = std::hypot(rp.x - s.position.x, rp.y - s.position.y);
    const double delay = distance / kSpeedOfLight + s.excess_delay_s +
                         scale * kPostureDelayScaleS * std::abs(pert.delay[l]);
    const double amplitude = s.weight * std::exp(-s.excess_delay_s / kDelaySpreadS) /
                             std::max(distance, 0.5) * std::exp(scale * pert.log_gain[l]);
    const double phase = g.phase[antenna][l] + scale * pert.phase[l];
    paths.push_back({std::polar(amplitude, phase), delay});
  }
  return paths;
}

}  // namespace

double ScenarioConfig::perturbation_for(const TaskKey& key) const {
  for (const auto& o : overrides) {
    if (o.area == key.area && o.posture == key.posture) return o.posture_perturbation;
  }
  return posture_perturbation;
}

std::vector<std::string> ScenarioConfig::validate() const {
  std::vector<std::string> errors;
  if (subareas.empty()) errors.push_back("subareas: need at least one subarea");
  for (std::size_t i = 0; i < subareas.size(); ++i) {
    const auto& s = subareas[i];
    const std::string at = "subareas[" + std::to_string(i) + "]";
    if (s.rows < 1 || s.cols < 1) errors.push_back(at + ".rows/cols: must be >= 1");
    if (s.rows * s.cols < 2) errors.push_back(at + ": need at least 2 reference points");
    if (!(s.spacing_m > 0.0)) errors.push_back(at + ".spacing_m: must be > 0");
  }
  if (postures.empty()) errors.push_back("postures: need at least one posture");
  for (std::size_t i = 0; i < postures.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (postures[i] == postures[j]) errors.push_back("postures: duplicate id " + std::to_string(postures[i]));
    }
  }
  if (num_paths < 1) errors.push_back("num_paths: must be >= 1");
  if (!(noise_std >= 0.0)) errors.push_back("noise_std: must be >= 0");
  if (!(posture_perturbation >= 0.0)) errors.push_back("posture_perturbation: must be >= 0");
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    if (!(overrides[i].posture_perturbation >= 0.0))
      errors.push_back("overrides[" + std::to_string(i) + "].posture_perturbation: must be >= 0");
  }
  if (n_packets < 1) errors.push_back("N_t: must be >= 1");
  if (num_subcarriers < 1) errors.push_back("num_subcarriers: must be >= 1");
  if (num_rx < 1) errors.push_back("num_rx_antennas: must be >= 1");
  if (samples_per_rp < 1) errors.push_back("samples_per_rp: must be >= 1");
  return errors;
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json::object();
  j["subareas"] = nlohmann::json::array();
  for (const auto& s : c.subareas) {
    j["subareas"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"spacing_m", s.spacing_m}});
  }
  j["postures"] = c.postures;
  j["num_paths"] = c.num_paths;
  j["noise_std"] = c.noise_std;
  j["posture_perturbation"] = c.posture_perturbation;
  j["overrides"] = nlohmann::json::array();
  for (const auto& o : c.overrides) {
    j["overrides"].push_back(
        {{"area", o.area}, {"posture", o.posture}, {"posture_perturbation", o.posture_perturbation}});
  }
  j["seed"] = c.seed;
  j["N_t"] = c.n_packets;
  j["num_subcarriers"] = c.num_subcarriers;
  j["num_rx_antennas"] = c.num_rx;
  j["samples_per_rp"] = c.samples_per_rp;
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  c = ScenarioConfig{};
  if (j.contains("subareas")) {
    for (const auto& s : j.at("subareas")) {
      SubareaLayout layout;
      layout.name = s.value("name", std::string{});
      layout.rows = s.value("rows", layout.rows);
      layout.cols = s.value("cols", layout.cols);
      layout.spacing_m = s.value("spacing_m", layout.spacing_m);
      c.subareas.push_back(layout);
    }
  }
  if (j.contains("postures")) c.postures = j.at("postures").get<std::vector<int>>();
  c.num_paths = j.value("num_paths", c.num_paths);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.posture_perturbation = j.value("posture_perturbation", c.posture_perturbation);
  if (j.contains("overrides")) {
    for (const auto& o : j.at("overrides")) {
      c.overrides.push_back({o.at("area").get<int>(), o.at("posture").get<int>(),
                             o.at("posture_perturbation").get<double>()});
    }
  }
  c.seed = j.value("seed", c.seed);
  c.n_packets = j.value("N_t", c.n_packets);
  c.num_subcarriers = j.value("num_subcarriers", c.num_subcarriers);
  c.num_rx = j.value("num_rx_antennas", c.num_rx);
  c.samples_per_rp = j.value("samples_per_rp", c.samples_per_rp);
}

ScenarioConfig reference_scenario() {
  ScenarioConfig c;
  for (int a = 1; a <= 5; ++a) {
    c.subareas.push_back({"area" + std::to_string(a), 3, 3, a == 5 ? 2.0 : 0.6});
  }
  c.postures = {0, 1, 2, 3, 4};
  return c;
}

std::vector<double> subcarrier_offsets_hz(int num_subcarriers) {
  if (num_subcarriers == 30) {
    static const int kGrouped[30] = {-28, -26, -24, -22, -20, -18, -16, -14, -12, -10,
                                     -8,  -6,  -4,  -2,  -1,  1,   3,   5,   7,   9,
                                     11,  13,  15,  17,  19,  21,  23,  25,  27,  28};
    std::vector<double> f;
    for (const int k : kGrouped) f.push_back(k * kToneSpacingHz);
    return f;
  }
  std::vector<double> f(static_cast<std::size_t>(num_subcarriers), 0.0);
  if (num_subcarriers > 1) {
    for (int n = 0; n < num_subcarriers; ++n) {
      f[static_cast<std::size_t>(n)] = (-28.0 + 56.0 * n / (num_subcarriers - 1)) * kToneSpacingHz;
    }
  }
  return f;
}

std::vector<std::complex<double>> multipath_response(std::span<const PathComponent> paths,
                                                     std::span<const double> frequencies_hz) {
  std::vector<std::complex<double>> h(frequencies_hz.size());
  for (std::size_t n = 0; n < frequencies_hz.size(); ++n) {
    std::complex<double> sum{0.0, 0.0};
    for (const auto& p : paths) {
      sum += p.gain * std::polar(1.0, -2.0 * std::numbers::pi * frequencies_hz[n] * p.delay_s);
    }
    h[n] = sum;
  }
  return h;
}

Dataset generate_scenario(const ScenarioConfig& config) {
  const auto errors = config.validate();
  if (!errors.empty()) {
    std::string msg = "invalid scenario config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
  Dataset dataset;
  DatasetManifest& m = dataset.manifest;
  m.n_packets = config.n_packets;
  m.num_subcarriers = config.num_subcarriers;
  m.num_rx_antennas = config.num_rx;
  int next_rp = 0;
  for (int a = 1; a <= config.num_subareas(); ++a) {
    const SubareaLayout& layout = config.subareas[static_cast<std::size_t>(a - 1)];
    m.areas.push_back({a, layout.name.empty() ? "area" + std::to_string(a) : layout.name});
    for (int r = 0; r < layout.rows; ++r) {
      for (int c = 0; c < layout.cols; ++c) {
        m.rps.push_back({next_rp++, a, {c * layout.spacing_m, r * layout.spacing_m}});
      }
    }
  }
  for (const int p : config.postures) m.postures.push_back({p, "posture" + std::to_string(p)});

  std::vector<TaskKey> keys;
  for (const auto& area : m.areas) {
    for (const auto& posture : m.postures) keys.push_back({area.id, posture.id});
  }
  dataset.tasks.resize(keys.size());

  const auto freqs = subcarrier_offsets_hz(config.num_subcarriers);
  const std::size_t num_rx = static_cast<std::size_t>(config.num_rx);
  const std::size_t num_sc = static_cast<std::size_t>(config.num_subcarriers);
  const Rng root(config.seed);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < keys.size(); ++t) {
    const TaskKey key = keys[t];
    const AreaGeometry geometry = area_geometry(config, key.area);
    const PosturePerturbation pert = posture_perturbation(config, key.area, key.posture);
    const double scale = config.perturbation_for(key);
    TaskData task{key, {}};
    for (const auto& rp : m.rps_in_area(key.area)) {
      std::vector<std::complex<float>> clean(num_rx * num_sc);
      for (std::size_t ant = 0; ant < num_rx; ++ant) {
        const auto paths = link_paths(geometry, pert, scale, ant, rp.location);
        const auto h = multipath_response(paths, freqs);
        for (std::size_t n = 0; n < num_sc; ++n) clean[ant * num_sc + n] = std::complex<float>(h[n]);
      }
      auto& slot = task.samples_by_rp[rp.id];
      for (int s = 0; s < config.samples_per_rp; ++s) {
        Rng noise = root.substream({kTagNoise, static_cast<std::uint64_t>(key.area),
                                    static_cast<std::uint64_t>(key.posture),
                                    static_cast<std::uint64_t>(rp.id), static_cast<std::uint64_t>(s)});
        std::vector<ChannelResponse> packets;
        packets.reserve(static_cast<std::size_t>(config.n_packets));
        for (int pkt = 0; pkt < config.n_packets; ++pkt) {
          std::vector<std::complex<float>> values = clean;
          if (config.noise_std > 0.0) {
            for (auto& v : values) {
              const double re = v.real() + config.noise_std * noise.normal();
              const double im = v.imag() + config.noise_std * noise.normal();
              v = {static_cast<float>(re), static_cast<float>(im)};
            }
          }
          packets.emplace_back(num_rx, num_sc, std::move(values));
        }
        slot.push_back(std::make_shared<const CSIImage>(build_csi_image(packets)));
      }
    }
    dataset.tasks[t] = std::move(task);
  }
  return dataset;
}

}  // namespace csiloc
