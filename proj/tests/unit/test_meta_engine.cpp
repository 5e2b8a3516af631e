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

#include <atomic>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <omp.h>

#include "csiloc/errors.hpp"
#include "csiloc/meta_engine.hpp"
#include "csiloc/scenario_sim.hpp"
#include "fixture_models.hpp"
#include "fixtures.hpp"

using namespace csiloc;
using testing::LinearRegressor;
using testing::QuadraticRegressor;

namespace {

std::vector<Task> random_tasks(std::uint64_t seed, std::size_t count) {
  std::vector<Task> tasks;
  for (std::size_t m = 0; m < count; ++m) {
    Task t;
    t.key = {1, static_cast<int>(m)};
    t.support = testing::random_records(seed * 10 + m, 4, 1, 4, 4);
    t.query = testing::random_records(seed * 10 + m + 100, 3, 1, 4, 4);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

double outer_objective(const Regressor& model, const ParamSet& theta, const std::vector<Task>& tasks,
                       const std::vector<double>& w, double alpha, int steps) {
  double total = 0.0;
  for (std::size_t m = 0; m < tasks.size(); ++m)
    total += w[m] * model.loss(inner_adapt(model, theta, tasks[m].support, alpha, steps), tasks[m].query);
  return total;
}

TaskSet tiny_task_set(std::uint64_t seed) {
  auto ds = std::make_shared<const Dataset>(generate_scenario(testing::tiny_scenario(seed)));
  return make_task_set(ds, {1, 4}, 0.5, 1);
}

MetaConfig tiny_config() {
  MetaConfig c;
  c.alpha = 0.05;
  c.beta = 0.01;
  c.epochs = 2;
  c.batch_size = 2;
  c.inner_steps = 2;
  c.k_support = 2;
  c.k_query = 2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("default configuration") {
  const MetaConfig c;
  CHECK(c.alpha == 0.01);
  CHECK(c.beta == 0.001);
  CHECK(c.epochs == 6);
  CHECK(c.batch_size == 4);
  CHECK(c.inner_steps == 5);
  CHECK(c.finetune_steps == 13);
  CHECK(c.k_support == 20);
  CHECK(c.k_query == 20);
  CHECK(c.validate().empty());
  const nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<MetaConfig>()) == j);

  MetaConfig bad;
  bad.alpha = 0.0;
  bad.inner_steps = 0;
  CHECK(bad.validate().size() == 2);
}

TEST_CASE("inner_adapt on the quadratic fixture") {
  const QuadraticRegressor model;
  const auto batch = testing::random_records(1, 1, 1, 1, 1);
  const ParamSet w0 = model.init_params(0);
  CHECK(inner_adapt(model, w0, batch, 0.1, 1).values()[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(inner_adapt(model, w0, batch, 0.1, 2).values()[0] == doctest::Approx(1.08).epsilon(1e-14));
  const ParamSet at_min = QuadraticRegressor(3.0, 3.0).init_params(0);
  CHECK(inner_adapt(model, at_min, batch, 0.1, 5) == at_min);
  CHECK_THROWS_AS(inner_adapt(model, w0, batch, 0.1, 0), std::invalid_argument);
}

TEST_CASE("inner_adapt leaves theta untouched") {
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  const ParamSet theta = model.init_params(4);
  const auto sum = theta.checksum();
  const auto batch = testing::random_records(2, 4, 1, 4, 4);
  const ParamSet phi = inner_adapt(model, theta, batch, 0.05, 3);
  CHECK(theta.checksum() == sum);
  CHECK_FALSE(phi == theta);
}

TEST_CASE("inner_adapt reports the diverging step") {
  const QuadraticRegressor model;
  const auto batch = testing::random_records(1, 1, 1, 1, 1);
  // Each step multiplies (w - 3) by -2, so the loss 9 * 4^k passes 1e6 at k = 9.
  try {
    inner_adapt(model, model.init_params(0), batch, 1.5, 20);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 9);
  }
}

TEST_CASE("meta-gradient on the quadratic fixture matches the chain rule") {
  const QuadraticRegressor model;
  Task t;
  t.support = testing::random_records(1, 1, 1, 1, 1);
  t.query = t.support;
  const std::vector<Task> tasks = {t};
  const std::vector<double> w = {1.0};
  const double alpha = 0.1;
  for (int n = 0; n <= 3; ++n) {
    const double shrink = std::pow(1.0 - 2.0 * alpha, n);
    const double phi = 3.0 + shrink * (0.0 - 3.0);
    const auto full = meta_gradient(model, model.init_params(0), tasks, w, alpha, n, MetaGradient::full);
    const auto fo = meta_gradient(model, model.init_params(0), tasks, w, alpha, n, MetaGradient::first_order);
    CHECK(full.gradient.values()[0] == doctest::Approx(2.0 * (phi - 3.0) * shrink).epsilon(1e-12));
    CHECK(fo.gradient.values()[0] == doctest::Approx(2.0 * (phi - 3.0)).epsilon(1e-12));
    CHECK(full.outer_loss == doctest::Approx((phi - 3.0) * (phi - 3.0)).epsilon(1e-12));
  }
}

TEST_CASE("full meta-gradient matches finite differences through the inner loop") {
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto tasks = random_tasks(seed, 2);
    const std::vector<double> w = {0.3, 0.7};
    const ParamSet theta = model.init_params(seed);
    const auto r = meta_gradient(model, theta, tasks, w, 0.05, 3, MetaGradient::full);
    const auto fd = testing::finite_difference(
        [&](const ParamSet& q) { return outer_objective(model, q, tasks, w, 0.05, 3); }, theta, 1e-5);
    CHECK(testing::max_relative_error(r.gradient.values(), fd, 1e-6) < 1e-3);
    CHECK(r.outer_loss == doctest::Approx(outer_objective(model, theta, tasks, w, 0.05, 3)).epsilon(1e-12));
  }
}

TEST_CASE("first-order and full agree at zero steps and nearly agree at tiny alpha") {
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  const auto tasks = random_tasks(5, 2);
  const std::vector<double> w = {0.5, 0.5};
  const ParamSet theta = model.init_params(5);
  const auto f0 = meta_gradient(model, theta, tasks, w, 0.05, 0, MetaGradient::full);
  const auto o0 = meta_gradient(model, theta, tasks, w, 0.05, 0, MetaGradient::first_order);
  CHECK(f0.gradient == o0.gradient);

  const auto f = meta_gradient(model, theta, tasks, w, 1e-6, 3, MetaGradient::full);
  const auto o = meta_gradient(model, theta, tasks, w, 1e-6, 3, MetaGradient::first_order);
  CHECK((f.gradient - o.gradient).norm() / f.gradient.norm() < 0.05);
}

TEST_CASE("one task, unit weight, zero inner steps is gradient descent on the query loss") {
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  const auto tasks = random_tasks(6, 1);
  MetaConfig cfg = tiny_config();
  cfg.inner_steps = 0;
  MetaState state;
  state.theta = model.init_params(6);
  const ParamSet expected = ParamSet(state.theta).axpy(-cfg.beta, model.grad(state.theta, tasks[0].query));
  const std::vector<double> w = {1.0};
  meta_step(state, model, tasks, w, cfg);
  CHECK(testing::max_relative_error(state.theta.values(), expected.values()) < 1e-14);

  const std::vector<double> off = {0.9};
  CHECK_THROWS_AS(meta_step(state, model, tasks, off, cfg), std::invalid_argument);
}

TEST_CASE("meta_train with zero epochs returns the initial parameters") {
  const TaskSet set = tiny_task_set(1);
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  MetaConfig cfg = tiny_config();
  cfg.epochs = 0;
  const ParamSet init = model.init_params(1);
  const MetaState s = meta_train(set, model, init, cfg);
  CHECK(s.theta == init);
  CHECK(s.trace.empty());
}

TEST_CASE("meta_train is bit-identical across reruns and batches are simplex-weighted") {
  const TaskSet set = tiny_task_set(2);
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  const ParamSet init = model.init_params(2);
  const MetaConfig cfg = tiny_config();
  const MetaState a = meta_train(set, model, init, cfg);
  const MetaState b = meta_train(set, model, init, cfg);
  CHECK(a.theta == b.theta);
  REQUIRE(a.trace.size() == 4);  // 2 epochs of ceil(4 / 2) batches
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].outer_loss == b.trace[i].outer_loss);
    const double sum = std::accumulate(a.trace[i].weights.begin(), a.trace[i].weights.end(), 0.0);
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  CHECK(a.epoch == 2);
  CHECK(a.epoch_loss.size() == 2);
  CHECK_FALSE(a.theta == init);
}

TEST_CASE("meta_train does not depend on the worker count") {
  const TaskSet set = tiny_task_set(2);
  ConvRegressor model(testing::tiny_spec(), Precision::f64);
  model.set_chunk_size(2);
  const ParamSet init = model.init_params(2);
  MetaConfig cfg = tiny_config();
  cfg.meta_gradient = MetaGradient::full;
  const int before = omp_get_max_threads();
  omp_set_num_threads(1);
  const MetaState one = meta_train(set, model, init, cfg);
  omp_set_num_threads(3);
  const MetaState three = meta_train(set, model, init, cfg);
  omp_set_num_threads(before);
  CHECK(one.theta == three.theta);
  for (std::size_t i = 0; i < one.trace.size(); ++i) CHECK(one.trace[i].outer_loss == three.trace[i].outer_loss);
}

TEST_CASE("nw mode equals w_dis with forced uniform weights and ignores distances") {
  const TaskSet set = tiny_task_set(3);
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  const ParamSet init = model.init_params(3);
  MetaConfig nw = tiny_config();
  nw.weighting = WeightingMode::nw;
  MetaConfig wd = tiny_config();
  MetaTrainOptions forced;
  forced.forced_raw_weights = std::vector<double>(set.num_training(), 0.25);
  const MetaState a = meta_train(set, model, init, nw);
  const MetaState b = meta_train(set, model, init, wd, forced);
  CHECK(testing::max_relative_error(a.theta.values(), b.theta.values(), 1.0) < 1e-10);

  MetaTrainOptions perm;
  perm.distances = std::vector<double>{4.0, 1.0, 3.0, 2.0};
  const MetaState c = meta_train(set, model, init, nw, perm);
  perm.distances = std::vector<double>{1.0, 2.0, 3.0, 4.0};
  const MetaState d = meta_train(set, model, init, nw, perm);
  CHECK(c.theta == d.theta);
  CHECK(c.theta == a.theta);
}

TEST_CASE("meta_train training never touches the target task") {
  const TaskSet set = tiny_task_set(4);
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  MetaTrainOptions opts;
  opts.on_batch = [&](const TraceRow& row) {
    for (const auto& k : row.tasks) CHECK_FALSE(k == set.target().key);
  };
  meta_train(set, model, model.init_params(4), tiny_config(), opts);
}

TEST_CASE("meta_train stops on interrupt and checkpoints on divergence") {
  const TaskSet set = tiny_task_set(5);
  const QuadraticRegressor model;
  const ParamSet init = model.init_params(0);

  std::atomic<bool> stop{true};
  MetaTrainOptions opts;
  opts.interrupt = &stop;
  const MetaState s = meta_train(set, model, init, tiny_config(), opts);
  CHECK(s.interrupted);
  CHECK(s.theta == init);

  MetaConfig wild = tiny_config();
  wild.alpha = 1.5;
  wild.inner_steps = 12;
  const auto path = std::filesystem::temp_directory_path() / "csiloc_abort.csip";
  std::filesystem::remove(path);
  MetaTrainOptions abort;
  abort.abort_checkpoint = path;
  CHECK_THROWS_AS(meta_train(set, model, init, wild, abort), DivergenceError);
  CHECK(load_checkpoint(path) == init);
  std::filesystem::remove(path);
}

TEST_CASE("embed features with periodic refresh") {
  const TaskSet set = tiny_task_set(6);
  const ConvRegressor model(testing::tiny_spec(), Precision::f64);
  MetaConfig cfg = tiny_config();
  cfg.features = FeatureMode::embed;
  cfg.weight_refresh_epochs = 1;
  const MetaState s = meta_train(set, model, model.init_params(6), cfg);
  std::size_t entries = 0;
  for (const auto& t : s.weights.tasks) entries += t.batch_weights.size();
  CHECK(entries == set.num_training() * 2);
  CHECK(s.weights.features == FeatureMode::embed);
}

TEST_CASE("finetune descends and predict is deterministic on the convex fixture") {
  const LinearRegressor model(2);
  const auto support = testing::linear_records(1, 12);
  const auto query = testing::linear_records(2, 5);
  const ParamSet theta = model.init_params(1);
  const ParamSet tuned = finetune(model, theta, support, 0.1, 5);
  CHECK(model.loss(tuned, support) <= model.loss(theta, support));

  const ParamSet exact = finetune(model, theta, support, 0.3, 3000);
  const auto pred = predict(model, exact, query);
  REQUIRE(pred.size() == query.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    CHECK(std::abs(pred[i].x - query[i].label().x) < 1e-6);
    CHECK(std::abs(pred[i].y - query[i].label().y) < 1e-6);
  }
  const auto again = predict(model, exact, query);
  for (std::size_t i = 0; i < pred.size(); ++i) CHECK((pred[i] == again[i]));

  const ParamSet flat = QuadraticRegressor(3.0, 3.0).init_params(0);
  CHECK(finetune(QuadraticRegressor(), flat, support, 0.1, 13) == flat);
  CHECK_THROWS_AS(finetune(model, theta, support, 0.1, 0), std::invalid_argument);
}
