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


#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "csiloc/scenario_sim.hpp"
#include "csiloc/task_weighting.hpp"
#include "fixtures.hpp"

using namespace csiloc;

namespace {

TaskCloud cloud_of(const Dataset& ds, const TaskKey& key) {
  const auto recs = ds.records(key);
  TaskCloud c;
  c.points.resize(static_cast<Eigen::Index>(recs.size()), static_cast<Eigen::Index>(recs.front().image->size()));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto px = recs[i].image->pixels();
    for (std::size_t j = 0; j < px.size(); ++j) c.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[j];
  }
  return c;
}

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_CASE("reference scenario shape") {
  const auto c = reference_scenario();
  CHECK(c.num_subareas() * static_cast<int>(c.postures.size()) == 25);
  CHECK(c.n_packets == 60);
  CHECK(c.num_subcarriers == 30);
  CHECK(c.num_rx == 3);
  CHECK(c.subareas[4].spacing_m == 2.0);
  for (int a = 0; a < 4; ++a) CHECK(c.subareas[static_cast<std::size_t>(a)].spacing_m == 0.6);
  CHECK(c.validate().empty());
}

TEST_CASE("generation is a pure function of the config") {
  const auto cfg = testing::small_scenario(7);
  const Dataset a = generate_scenario(cfg);
  const Dataset b = generate_scenario(cfg);
  CHECK(identical(a, b));
  CHECK(a.tasks.size() == 4);
  CHECK(a.manifest.rps.size() == 8);

  auto other = cfg;
  other.seed = 8;
  CHECK_FALSE(identical(a, generate_scenario(other)));
}

TEST_CASE("zero-delay single path gives a flat response") {
  const std::vector<PathComponent> paths = {{{0.7, -0.2}, 0.0}};
  const auto f = subcarrier_offsets_hz(30);
  const auto h = multipath_response(paths, f);
  REQUIRE(h.size() == 30);
  for (const auto& v : h) CHECK(v == h.front());
}

TEST_CASE("multipath response matches the closed form for two paths") {
  const std::vector<PathComponent> paths = {{{1.0, 0.0}, 0.0}, {{0.5, 0.0}, 50e-9}};
  const std::vector<double> f = {0.0, 5e6, -10e6};
  const auto h = multipath_response(paths, f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double ph = -2.0 * std::numbers::pi * f[i] * 50e-9;
    CHECK(h[i].real() == doctest::Approx(1.0 + 0.5 * std::cos(ph)).epsilon(1e-12));
    CHECK(h[i].imag() == doctest::Approx(0.5 * std::sin(ph)).epsilon(1e-12));
  }
}

TEST_CASE("grouped subcarrier offsets for 30 subcarriers") {
  const auto f = subcarrier_offsets_hz(30);
  REQUIRE(f.size() == 30);
  CHECK(f.front() == doctest::Approx(-28 * 312.5e3));
  CHECK(f.back() == doctest::Approx(28 * 312.5e3));
  for (std::size_t i = 1; i < f.size(); ++i) CHECK(f[i] > f[i - 1]);
}

TEST_CASE("noise-free, unperturbed postures of one area are identical") {
  auto cfg = testing::small_scenario(9);
  cfg.noise_std = 0.0;
  cfg.posture_perturbation = 0.0;
  const Dataset ds = generate_scenario(cfg);
  for (int area = 1; area <= 2; ++area) {
    const auto& p0 = ds.task({area, 0}).samples_by_rp;
    const auto& p1 = ds.task({area, 1}).samples_by_rp;
    REQUIRE(p0.size() == p1.size());
    for (const auto& [rp, imgs] : p0) {
      for (std::size_t i = 0; i < imgs.size(); ++i) CHECK(*imgs[i] == *p1.at(rp)[i]);
    }
  }
}

TEST_CASE("override raises perturbation for one task only") {
  auto cfg = testing::small_scenario(10);
  cfg.overrides = {{2, 1, 0.9}};
  CHECK(cfg.perturbation_for({2, 1}) == 0.9);
  CHECK(cfg.perturbation_for({2, 0}) == cfg.posture_perturbation);
  CHECK(cfg.perturbation_for({1, 1}) == cfg.posture_perturbation);
}

TEST_CASE("noise-free fingerprints locate better than a random RP") {
  auto cfg = testing::small_scenario(11, 2);
  cfg.noise_std = 0.0;
  cfg.subareas = {{"area-1", 3, 3, 0.6}};
  const Dataset ds = generate_scenario(cfg);
  const auto recs = ds.records({1, 0});
  std::vector<FingerprintRecord> ref, held;
  for (const auto& r : recs) (r.tag.index == 0 ? ref : held).push_back(r);
  REQUIRE(ref.size() == 9);

  double nn_err = 0.0, random_err = 0.0;
  Rng rng(5);
  for (const auto& h : held) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ref.size(); ++i) {
      double d = 0.0;
      for (std::size_t p = 0; p < h.image->size(); ++p) {
        const double diff = h.image->pixels()[p] - ref[i].image->pixels()[p];
        d += diff * diff;
      }
      if (d < best_d) best_d = d, best = i;
    }
    nn_err += distance(ref[best].label(), h.label());
    random_err += distance(ref[rng.below(ref.size())].label(), h.label());
  }
  CHECK(nn_err < random_err);
}

TEST_CASE("posture distance grows with perturbation strength") {
  const std::vector<double> strengths = {0.05, 0.3, 1.0};
  std::vector<double> mean_w1(strengths.size(), 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::size_t s = 0; s < strengths.size(); ++s) {
      auto cfg = testing::small_scenario(seed);
      cfg.posture_perturbation = strengths[s];
      const Dataset ds = generate_scenario(cfg);
      mean_w1[s] += wasserstein_distance(cloud_of(ds, {1, 0}), cloud_of(ds, {1, 1})) / 5.0;
    }
  }
  CHECK(mean_w1[0] < mean_w1[1]);
  CHECK(mean_w1[1] < mean_w1[2]);
}

TEST_CASE("scenario config json round trip and validation") {
  auto cfg = testing::small_scenario(12);
  cfg.overrides = {{1, 1, 0.5}};
  const nlohmann::json j = cfg;
  const auto back = j.get<ScenarioConfig>();
  CHECK(nlohmann::json(back) == j);

  ScenarioConfig bad = cfg;
  bad.subareas.clear();
  bad.postures.clear();
  bad.noise_std = -1.0;
  const auto errors = bad.validate();
  CHECK(errors.size() == 3);
  CHECK_THROWS_AS(generate_scenario(bad), std::invalid_argument);
}
