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

#include "csiloc/meta_engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csiloc/errors.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

MetaGradient parse_meta_gradient(const std::string& s) {
  if (s == "full") return MetaGradient::full;
  if (s == "first_order") return MetaGradient::first_order;
  throw std::invalid_argument("unknown meta_gradient '" + s + "' (expected full or first_order)");
}

std::string to_string(MetaGradient m) { return m == MetaGradient::full ? "full" : "first_order"; }

std::vector<std::string> MetaConfig::validate() const {
  std::vector<std::string> e;
  if (!(alpha > 0.0) || !std::isfinite(alpha)) e.push_back("meta.alpha: must be > 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) e.push_back("meta.beta: must be > 0");
  if (epochs < 0) e.push_back("meta.epochs: must be >= 0");
  if (batch_size < 1) e.push_back("meta.batch_size: must be >= 1");
  if (inner_steps < 1) e.push_back("meta.inner_steps: must be >= 1");
  if (finetune_steps < 1) e.push_back("meta.finetune_steps: must be >= 1");
  if (k_support < 1) e.push_back("meta.k_support: must be >= 1");
  if (k_query < 1) e.push_back("meta.k_query: must be >= 1");
  if (weight_refresh_epochs < 0) e.push_back("meta.weight_refresh_epochs: must be >= 0");
  return e;
}

void to_json(nlohmann::json& j, const MetaConfig& c) {
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"inner_steps", c.inner_steps},
       {"finetune_steps", c.finetune_steps},
       {"k_support", c.k_support},
       {"k_query", c.k_query},
       {"weighting", to_string(c.weighting)},
       {"features", to_string(c.features)},
       {"meta_gradient", to_string(c.meta_gradient)},
       {"weight_refresh_epochs", c.weight_refresh_epochs},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, MetaConfig& c) {
  c = MetaConfig{};
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
  c.k_support = j.value("k_support", c.k_support);
  c.k_query = j.value("k_query", c.k_query);
  if (j.contains("weighting")) c.weighting = parse_weighting_mode(j.at("weighting").get<std::string>());
  if (j.contains("features")) c.features = parse_feature_mode(j.at("features").get<std::string>());
  if (j.contains("meta_gradient")) c.meta_gradient = parse_meta_gradient(j.at("meta_gradient").get<std::string>());
  c.weight_refresh_epochs = j.value("weight_refresh_epochs", c.weight_refresh_epochs);
  c.seed = j.value("seed", c.seed);
}

namespace {

std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
  std::uint64_t h = mix64(seed);
  for (const auto l : labels) h = mix64(h ^ mix64(l + 0x632be59bd9b4e019ULL));
  return h;
}

enum : std::uint64_t { kWeightSample = 1, kEpochPlan = 2, kTaskSample = 3, kTarget = 4 };

void guard(const char* where, int step, double loss) {
  if (!std::isfinite(loss) || loss > kDivergenceLimit) throw DivergenceError(where, step, loss);
}

ParamSet descend(const char* where, const Regressor& model, const ParamSet& theta,
                 std::span<const FingerprintRecord> support, double alpha, int steps,
                 std::vector<ParamSet>* visited) {
  ParamSet phi = theta;
  ParamSet g;
  for (int k = 0; k < steps; ++k) {
    if (visited) visited->push_back(phi);
    const double loss = model.loss_and_grad(phi, support, &g);
    guard(where, k, loss);
    if (!g.all_finite()) throw DivergenceError(where, k, loss);
    phi.axpy(-alpha, g);
  }
  return phi;
}

}  // namespace

ParamSet inner_adapt(const Regressor& model, const ParamSet& theta, std::span<const FingerprintRecord> support,
                     double alpha, int steps) {
  if (steps < 1) throw std::invalid_argument("inner_adapt: steps must be >= 1");
  if (support.empty()) throw std::invalid_argument("inner_adapt: empty support set");
  return descend("inner_adapt", model, theta, support, alpha, steps, nullptr);
}

MetaGradientResult meta_gradient(const Regressor& model, const ParamSet& theta, std::span<const Task> tasks,
                                 std::span<const double> weights, double alpha, int inner_steps,
                                 MetaGradient order) {
  if (tasks.empty()) throw std::invalid_argument("meta_gradient: empty meta-batch");
  if (weights.size() != tasks.size()) throw ShapeError("meta_gradient: one weight per task required");
  if (inner_steps < 0) throw std::invalid_argument("meta_gradient: inner_steps must be >= 0");
  MetaGradientResult r;
  r.gradient = ParamSet::zeros_like(theta);
  std::vector<ParamSet> visited;
  ParamSet v;
  for (std::size_t m = 0; m < tasks.size(); ++m) {
    const Task& task = tasks[m];
    if (task.query.empty() || (inner_steps > 0 && task.support.empty()))
      throw std::invalid_argument("meta_gradient: task " + task_name(task.key) + " has an empty set");
    visited.clear();
    const ParamSet phi = descend("meta_step inner loop", model, theta, task.support, alpha, inner_steps,
                                 order == MetaGradient::full ? &visited : nullptr);
    const double lq = model.loss_and_grad(phi, task.query, &v);
    guard("meta_step query loss", inner_steps, lq);
    if (order == MetaGradient::full) {
      // v <- (I - alpha H_s(phi_k)) v, from the last inner step back to theta.
      for (std::size_t k = visited.size(); k-- > 0;) v.axpy(-alpha, model.hvp(visited[k], task.support, v));
    }
    r.gradient.axpy(weights[m], v);
    r.outer_loss += weights[m] * lq;
    r.task_losses.push_back(lq);
  }
  return r;
}

double meta_step(MetaState& state, const Regressor& model, std::span<const Task> tasks,
                 std::span<const double> weights, const MetaConfig& config) {
  double sum = 0.0;
  for (const double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("meta_step: weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("meta_step: weights must sum to 1");
  const auto r = meta_gradient(model, state.theta, tasks, weights, config.alpha, config.inner_steps,
                               config.meta_gradient);
  guard("meta_step", static_cast<int>(state.trace.size()), r.outer_loss);
  if (!r.gradient.all_finite()) throw DivergenceError("meta_step", static_cast<int>(state.trace.size()), r.outer_loss);
  state.theta.axpy(-config.beta, r.gradient);
  return r.outer_loss;
}

std::uint64_t target_sample_seed(std::uint64_t seed) { return derive(seed, {kTarget}); }

WeightReport task_weights(const TaskSet& tasks, const Regressor& model, const ParamSet& params,
                          const MetaConfig& config) {
  std::vector<TaskKey> keys;
  for (const auto& t : tasks.training()) keys.push_back(t.key);
  if (config.weighting == WeightingMode::nw) {
    const std::vector<double> zeros(keys.size(), 0.0);
    return weights_from_distances(config.weighting, config.features, tasks.target().key, keys, zeros);
  }
  const auto* conv = dynamic_cast<const ConvRegressor*>(&model);
  if (config.features == FeatureMode::embed && !conv)
    throw std::invalid_argument("task_weights: embed features need a ConvRegressor");
  const auto features = [&](const Task& t) { return task_features(t, config.features, conv, &params); };
  const Task target = tasks.sample_target(config.k_support, config.k_query, target_sample_seed(config.seed));
  const TaskCloud target_cloud = features(target);
  std::vector<double> d(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const Task t = tasks.sample_training(i, config.k_support, config.k_query, derive(config.seed, {kWeightSample, i + 1}));
    d[i] = task_distance(config.weighting, target_cloud, features(t), derive(config.seed, {kWeightSample, i + 1, 7}));
  }
  return weights_from_distances(config.weighting, config.features, tasks.target().key, keys, d);
}

MetaState meta_train(const TaskSet& tasks, const Regressor& model, const ParamSet& init, const MetaConfig& config,
                     const MetaTrainOptions& options) {
  const auto errors = config.validate();
  if (!errors.empty()) throw std::invalid_argument("meta_train: " + errors.front());
  const std::size_t m = tasks.num_training();
  if (config.batch_size > m) throw std::invalid_argument("meta_train: batch_size exceeds the number of training tasks");

  std::vector<TaskKey> keys;
  for (const auto& t : tasks.training()) keys.push_back(t.key);

  MetaState state;
  state.theta = init;
  const auto refresh_report = [&]() {
    if (options.distances) {
      if (options.distances->size() != m) throw ShapeError("meta_train: one distance per training task required");
      return weights_from_distances(config.weighting, config.features, tasks.target().key, keys, *options.distances);
    }
    return task_weights(tasks, model, state.theta, config);
  };
  state.weights = refresh_report();
  if (options.forced_raw_weights && options.forced_raw_weights->size() != m)
    throw ShapeError("meta_train: one forced weight per training task required");

  const auto raw_weights = [&]() {
    if (options.forced_raw_weights) return *options.forced_raw_weights;
    std::vector<double> w;
    for (const auto& t : state.weights.tasks) w.push_back(t.raw_weight);
    return w;
  };
  std::vector<double> raw = raw_weights();

  for (int e = 0; e < config.epochs; ++e) {
    if (e > 0 && config.weight_refresh_epochs > 0 && e % config.weight_refresh_epochs == 0 &&
        config.weighting != WeightingMode::nw && !options.distances) {
      WeightReport fresh = refresh_report();
      for (std::size_t i = 0; i < m; ++i) fresh.tasks[i].batch_weights = std::move(state.weights.tasks[i].batch_weights);
      state.weights = std::move(fresh);
      raw = raw_weights();
    }
    const auto plan = plan_epoch(m, config.batch_size, derive(config.seed, {kEpochPlan, static_cast<std::uint64_t>(e)}));
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      if (options.interrupt && options.interrupt->load()) {
        state.interrupted = true;
        return state;
      }
      std::vector<std::size_t> idx = plan[b];
      std::sort(idx.begin(), idx.end());
      std::vector<Task> batch;
      std::vector<double> batch_raw;
      for (const auto i : idx) {
        batch.push_back(tasks.sample_training(
            i, config.k_support, config.k_query,
            derive(config.seed, {kTaskSample, static_cast<std::uint64_t>(e), b, i})));
        batch_raw.push_back(raw[i]);
      }
      const std::vector<double> w = renormalize_batch(batch_raw);
      double loss = 0.0;
      try {
        loss = meta_step(state, model, batch, w, config);
      } catch (const DivergenceError&) {
        if (options.abort_checkpoint) save_checkpoint(state.theta, *options.abort_checkpoint);
        throw;
      }
      TraceRow row{e, static_cast<int>(b), {}, w, loss};
      for (std::size_t j = 0; j < idx.size(); ++j) {
        row.tasks.push_back(keys[idx[j]]);
        state.weights.tasks[idx[j]].batch_weights.push_back(w[j]);
      }
      if (options.on_batch) options.on_batch(row);
      state.trace.push_back(std::move(row));
      epoch_sum += loss;
    }
    state.epoch_loss.push_back(epoch_sum / static_cast<double>(plan.size()));
    state.epoch = e + 1;
  }
  return state;
}

ParamSet finetune(const Regressor& model, const ParamSet& theta, std::span<const FingerprintRecord> support,
                  double alpha, int steps) {
  if (steps < 1) throw std::invalid_argument("finetune: steps must be >= 1");
  if (support.empty()) throw std::invalid_argument("finetune: empty support set");
  return descend("finetune", model, theta, support, alpha, steps, nullptr);
}

std::vector<Point2> predict(const Regressor& model, const ParamSet& theta, std::span<const FingerprintRecord> query) {
  return model.predict(theta, query);
}

}  // namespace csiloc
