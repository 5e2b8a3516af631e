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


// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 1 4 9      run a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "csiloc/csi_data.hpp"
#include "csiloc/evaluation.hpp"
#include "csiloc/meta_engine.hpp"
#include "csiloc/scenario_sim.hpp"
#include "csiloc/task_weighting.hpp"
#include "fixtures.hpp"
#include "learning.hpp"

using namespace csiloc;
namespace fs = std::filesystem;

namespace {

using acceptance::fmt;
using acceptance::Outcome;

// 1. W-1 equals the brute-force matching minimum.
Outcome ot_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(4);
    const auto a = testing::random_points(rng, n, d), b = testing::random_points(rng, n, d);
    const double got = wasserstein_distance(testing::to_cloud(a), testing::to_cloud(b));
    worst = std::max(worst, std::abs(got - testing::brute_force_w1(a, b)));
  }
  return {worst <= 1e-9, fmt("200 pairs, max |W1 - brute force| = %.3g", worst)};
}

double outer_objective(const Regressor& model, const ParamSet& theta, const std::vector<Task>& tasks,
                       const std::vector<double>& w, double alpha, int steps) {
  double total = 0.0;
  for (std::size_t m = 0; m < tasks.size(); ++m)
    total += w[m] * model.loss(inner_adapt(model, theta, tasks[m].support, alpha, steps), tasks[m].query);
  return total;
}

// 2. Analytic inner and full outer gradients against central differences.
Outcome gradient_fidelity() {
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  double inner = 0.0, outer = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const ParamSet theta = model.init_params(seed);
    params = theta.size();
    const auto batch = testing::random_records(seed, 5, 1, 4, 4);
    const auto fd = testing::finite_difference([&](const ParamSet& q) { return model.loss(q, batch); }, theta, 1e-5);
    inner = std::max(inner, testing::max_relative_error(model.grad(theta, batch).values(), fd, 1e-6));

    std::vector<Task> tasks(2);
    for (std::size_t m = 0; m < 2; ++m) {
      tasks[m].key = {1, static_cast<int>(m)};
      tasks[m].support = testing::random_records(seed * 10 + m, 4, 1, 4, 4);
      tasks[m].query = testing::random_records(seed * 10 + m + 5, 3, 1, 4, 4);
    }
    const std::vector<double> w = {0.4, 0.6};
    const auto g = meta_gradient(model, theta, tasks, w, 0.05, 3, MetaGradient::full);
    const auto ofd = testing::finite_difference(
        [&](const ParamSet& q) { return outer_objective(model, q, tasks, w, 0.05, 3); }, theta, 1e-5);
    outer = std::max(outer, testing::max_relative_error(g.gradient.values(), ofd, 1e-6));
  }
  return {params <= 50 && inner < 1e-4 && outer < 1e-3,
          fmt("%zu params, 3 seeds, max rel err inner %.2e, outer %.2e", params, inner, outer)};
}

// 3. nw mode and w_dis with forced uniform weights follow one trajectory.
Outcome nw_equivalence() {
  auto ds = std::make_shared<const Dataset>(generate_scenario(testing::tiny_scenario(17)));
  const TaskSet set = make_task_set(ds, {1, 4}, 0.5, 1);
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  const ParamSet init = model.init_params(17);
  MetaConfig base;
  base.alpha = 0.05;
  base.beta = 0.01;
  base.batch_size = 2;
  base.inner_steps = 2;
  base.k_support = 2;
  base.k_query = 2;
  base.seed = 17;
  double worst = 0.0;
  std::size_t batches = 0;
  for (int epochs = 1; epochs <= 2; ++epochs) {
    MetaConfig nw = base, wd = base;
    nw.epochs = wd.epochs = epochs;
    nw.weighting = WeightingMode::nw;
    wd.weighting = WeightingMode::w_dis;
    MetaTrainOptions forced;
    forced.forced_raw_weights = std::vector<double>(set.num_training(), 1.0 / double(set.num_training()));
    const MetaState a = meta_train(set, model, init, nw);
    const MetaState b = meta_train(set, model, init, wd, forced);
    for (std::size_t i = 0; i < a.theta.size(); ++i)
      worst = std::max(worst, std::abs(a.theta.values()[i] - b.theta.values()[i]));
    for (std::size_t i = 0; i < a.trace.size(); ++i)
      worst = std::max(worst, std::abs(a.trace[i].outer_loss - b.trace[i].outer_loss));
    batches = a.trace.size();
  }
  return {set.num_training() == 4 && worst <= 1e-10,
          fmt("4 training tasks, 2 epochs (%zu batches), max |diff| = %.3g", batches, worst)};
}

// 4. Softmax + batch renormalization stay on the simplex, reverse order, ignore shifts.
Outcome weight_laws() {
  Rng rng(4);
  int failures = 0;
  double worst_sum = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.below(24);
    std::vector<double> d(m);
    for (auto& x : d) x = rng.uniform(0.0, 80.0);
    const auto w = softmax_weights(d);
    const std::size_t b = 1 + rng.below(m);
    Rng pick = rng.substream({static_cast<std::uint64_t>(trial)});
    const auto idx = sample_without_replacement(m, b, pick);
    std::vector<double> raw, bd;
    for (auto i : idx) raw.push_back(w[i]), bd.push_back(d[i]);
    const auto r = renormalize_batch(raw);

    double s1 = 0.0, s2 = 0.0;
    for (double x : w) s1 += x, failures += x < 0.0;
    for (double x : r) s2 += x, failures += x < 0.0;
    worst_sum = std::max({worst_sum, std::abs(s1 - 1.0), std::abs(s2 - 1.0)});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (d[i] < d[j] && !(w[i] >= w[j])) ++failures;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j)
        if (bd[i] < bd[j] && !(r[i] >= r[j])) ++failures;

    const double c = rng.uniform(-50.0, 50.0);
    std::vector<double> shifted(d);
    for (auto& x : shifted) x += c;
    const auto ws = softmax_weights(shifted);
    for (std::size_t i = 0; i < m; ++i) worst_shift = std::max(worst_shift, std::abs(ws[i] - w[i]));
  }
  const bool pass = failures == 0 && worst_sum <= 1e-9 && worst_shift <= 1e-12;
  return {pass, fmt("1000 trials, %d violations, max |sum-1| = %.2e, max shift change = %.2e", failures,
                    worst_sum, worst_shift)};
}

// 8. Table arithmetic on the published W-Dis column.
Outcome table_arithmetic() {
  const std::vector<std::pair<std::string, double>> column = {
      {"1", 1.241}, {"2", 1.560}, {"3", 0.901}, {"4", 1.358}, {"5", 3.678}};
  std::map<std::pair<std::string, std::string>, double> cells;
  for (const auto& [area, v] : column) cells[{area, "W-Dis"}] = v;
  const double mean = comparison_table(cells).mean("W-Dis");
  // Every cell and the printed mean carry up to 0.0005 of rounding each.
  const bool pass = std::abs(mean - 1.748) <= 1e-3 && std::abs(mean - 1.747) <= 1e-3;
  return {pass, fmt("mean %.4f (printed 1.747)", mean)};
}

// 9. Image and dataset round trips on 100 seeded datasets.
Outcome codec_exactness() {
  const fs::path root = fs::temp_directory_path() / "csiloc_acceptance_codec";
  int bad_images = 0, bad_datasets = 0;
  std::size_t images = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto cfg = testing::small_scenario(seed, 1 + static_cast<int>(rng.below(3)));
    cfg.num_rx = 1 + static_cast<int>(rng.below(3));
    cfg.num_subcarriers = 1 + static_cast<int>(rng.below(8));
    cfg.n_packets = 1 + static_cast<int>(rng.below(10));
    const Dataset ds = generate_scenario(cfg);
    for (const auto& t : ds.tasks) {
      for (const auto& [rp, imgs] : t.samples_by_rp) {
        for (const auto& img : imgs) {
          const auto packets = image_to_responses(*img, static_cast<std::size_t>(cfg.num_subcarriers));
          bad_images += !(build_csi_image(packets) == *img);
          bad_images += !(image_to_responses(build_csi_image(packets), packets[0].num_subcarriers()) == packets);
          ++images;
        }
      }
    }
    fs::remove_all(root);
    write_dataset(ds, root);
    bad_datasets += !identical(ds, read_dataset(root));
  }
  fs::remove_all(root);
  return {bad_images == 0 && bad_datasets == 0,
          fmt("100 datasets, %zu images, %d image mismatches, %d dataset mismatches", images, bad_images, bad_datasets)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "OT oracle equivalence", 10.0, ot_oracle},
      {2, "gradient fidelity", 30.0, gradient_fidelity},
      {3, "NW equals unweighted MAML", 120.0, nw_equivalence},
      {4, "weight-law invariants", 0.0, weight_laws},
      {5, "meta-learning efficacy", 900.0, acceptance::efficacy},
      {6, "weighting helps under shift", 1200.0, acceptance::shift},
      {7, "K-sweep trend", 0.0, acceptance::k_trend},
      {8, "table arithmetic", 0.0, table_arithmetic},
      {9, "codec and construction exactness", 0.0, codec_exactness},
  };
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!chosen.empty() && std::find(chosen.begin(), chosen.end(), c.id) == chosen.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
