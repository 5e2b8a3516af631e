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

// Shared test fixtures and independent oracles (finite differences, brute force).

#ifndef CSILOC_TESTS_FIXTURES_HPP
#define CSILOC_TESTS_FIXTURES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "csiloc/csi_data.hpp"
#include "csiloc/inner_model.hpp"
#include "csiloc/param_set.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/scenario_sim.hpp"
#include "csiloc/task_weighting.hpp"

namespace csiloc::testing {

inline CSIImage random_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w, double scale = 1.0) {
  std::vector<float> px(c * h * w);
  for (auto& p : px) p = static_cast<float>(scale * rng.normal());
  return CSIImage(c, h, w, std::move(px));
}

inline std::vector<FingerprintRecord> random_records(std::uint64_t seed, std::size_t n, std::size_t c,
                                                     std::size_t h, std::size_t w) {
  Rng rng(seed);
  std::vector<FingerprintRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    RefPoint rp{static_cast<int>(i), 1, {rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)}};
    out.push_back({rp, std::make_shared<const CSIImage>(random_image(rng, c, h, w)),
                   {1, 0, static_cast<int>(i), 0}});
  }
  return out;
}

/// Two 2x2 areas, two postures, short images: fast enough for property loops.
inline ScenarioConfig small_scenario(std::uint64_t seed, int samples_per_rp = 3) {
  ScenarioConfig c;
  c.subareas = {{"area-1", 2, 2, 0.6}, {"area-2", 2, 2, 1.0}};
  c.postures = {0, 1};
  c.seed = seed;
  c.n_packets = 6;
  c.num_subcarriers = 4;
  c.num_rx = 2;
  c.samples_per_rp = samples_per_rp;
  return c;
}

/// One area of 2x2 RPs, five postures of 1x4x4 images: matches tiny_spec.
inline ScenarioConfig tiny_scenario(std::uint64_t seed) {
  auto c = small_scenario(seed, 4);
  c.subareas = {{"area-1", 2, 2, 0.6}};
  c.postures = {0, 1, 2, 3, 4};
  c.n_packets = 4;
  c.num_subcarriers = 2;
  c.num_rx = 1;
  return c;
}

inline ChannelResponse random_response(Rng& rng, std::size_t rx, std::size_t sc) {
  std::vector<std::complex<float>> v(rx * sc);
  for (auto& x : v) x = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())};
  return ChannelResponse(rx, sc, std::move(v));
}

/// Four single-channel 3x3 conv stages on a 1x4x4 input, fc 1 -> 2: 44 parameters.
inline ModelSpec tiny_spec(Activation act = Activation::tanh) {
  ModelSpec s;
  s.in_channels = 1;
  s.in_height = 4;
  s.in_width = 4;
  s.stages = {{1, 3, 1, 1, act, true}, {1, 3, 1, 1, act, true}, {1, 3, 1, 1, act, false}, {1, 3, 1, 1, act, false}};
  return s;
}

/// Central finite differences of a scalar function of the flattened parameters.
inline std::vector<double> finite_difference(const std::function<double(const ParamSet&)>& f,
                                             const ParamSet& at, double step) {
  std::vector<double> g(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    ParamSet plus = at, minus = at;
    plus.values()[i] += step;
    minus.values()[i] -= step;
    g[i] = (f(plus) - f(minus)) / (2.0 * step);
  }
  return g;
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// n points in d dimensions, Gaussian, as nested vectors for brute-force oracles.
inline std::vector<std::vector<double>> random_points(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  std::vector<std::vector<double>> pts(n, std::vector<double>(d));
  for (auto& p : pts)
    for (auto& x : p) x = scale * rng.normal();
  return pts;
}

inline TaskCloud to_cloud(const std::vector<std::vector<double>>& pts) {
  TaskCloud c;
  c.points.resize(static_cast<Eigen::Index>(pts.size()), pts.empty() ? 0 : static_cast<Eigen::Index>(pts[0].size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t k = 0; k < pts[i].size(); ++k) c.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = pts[i][k];
  return c;
}

/// Minimum over all n! matchings of the mean Euclidean cost; the OT oracle.
inline double brute_force_w1(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  const std::size_t n = a.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < a[i].size(); ++k) {
        const double diff = a[i][k] - b[perm[i]][k];
        d2 += diff * diff;
      }
      cost += std::sqrt(d2);
    }
    best = std::min(best, cost / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace csiloc::testing

#endif  // CSILOC_TESTS_FIXTURES_HPP
