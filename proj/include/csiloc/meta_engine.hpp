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

#ifndef CSILOC_META_ENGINE_HPP
#define CSILOC_META_ENGINE_HPP

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csiloc/inner_model.hpp"
#include "csiloc/task_sampler.hpp"
#include "csiloc/task_weighting.hpp"

namespace csiloc {

enum class MetaGradient { first_order, full };

MetaGradient parse_meta_gradient(const std::string& s);
std::string to_string(MetaGradient m);

struct MetaConfig {
  double alpha = 0.01;
  double beta = 0.001;
  int epochs = 6;
  std::size_t batch_size = 4;
  int inner_steps = 5;
  int finetune_steps = 13;
  std::size_t k_support = 20;
  std::size_t k_query = 20;
  WeightingMode weighting = WeightingMode::w_dis;
  FeatureMode features = FeatureMode::raw;
  MetaGradient meta_gradient = MetaGradient::full;
  int weight_refresh_epochs = 0;  // 0: weights computed once before training
  std::uint64_t seed = 0;

  /// One message per offending field, prefixed "meta.<field>".
  std::vector<std::string> validate() const;
};

void to_json(nlohmann::json& j, const MetaConfig& c);
void from_json(const nlohmann::json& j, MetaConfig& c);

/// Losses above this are treated as divergence.
inline constexpr double kDivergenceLimit = 1e6;

/// `steps` full-batch gradient steps from theta; theta is not modified.
/// Throws DivergenceError carrying the step index.
ParamSet inner_adapt(const Regressor& model, const ParamSet& theta, std::span<const FingerprintRecord> support,
                     double alpha, int steps);

struct MetaGradientResult {
  ParamSet gradient;               // d/d theta of sum_m w_m L_query(phi_m)
  double outer_loss = 0.0;         // sum_m w_m L_query(phi_m)
  std::vector<double> task_losses;  // L_query(phi_m)
};

/// Weighted outer gradient over a meta-batch. `inner_steps` may be 0, which
/// reduces to the plain query-loss gradient at theta.
MetaGradientResult meta_gradient(const Regressor& model, const ParamSet& theta, std::span<const Task> tasks,
                                 std::span<const double> weights, double alpha, int inner_steps,
                                 MetaGradient order);

struct TraceRow {
  int epoch = 0;
  int batch = 0;
  std::vector<TaskKey> tasks;
  std::vector<double> weights;
  double outer_loss = 0.0;
};

struct MetaState {
  ParamSet theta;
  int epoch = 0;
  std::vector<double> epoch_loss;  // mean outer loss per completed epoch
  std::vector<TraceRow> trace;
  WeightReport weights;
  bool interrupted = false;
};

/// One outer update theta <- theta - beta * gradient. Returns the outer loss.
double meta_step(MetaState& state, const Regressor& model, std::span<const Task> tasks,
                 std::span<const double> weights, const MetaConfig& config);

struct MetaTrainOptions {
  /// Replaces the per-task weights before batch renormalization.
  std::optional<std::vector<double>> forced_raw_weights;
  /// Skips distance computation (training order).
  std::optional<std::vector<double>> distances;
  /// Called after every meta-batch.
  std::function<void(const TraceRow&)> on_batch;
  /// Checked between meta-batches; training stops early when set.
  const std::atomic<bool>* interrupt = nullptr;
  /// Last finite parameters are written here before a divergence is rethrown.
  std::optional<std::filesystem::path> abort_checkpoint;
};

/// Seed of the target-task draw shared by weighting and evaluation.
std::uint64_t target_sample_seed(std::uint64_t seed);

/// Static task weights of the target against every training task, from
/// support samples drawn with the config's K.
WeightReport task_weights(const TaskSet& tasks, const Regressor& model, const ParamSet& params,
                          const MetaConfig& config);

/// Offline stage: `epochs` passes of ceil(M / B) meta-batches each.
MetaState meta_train(const TaskSet& tasks, const Regressor& model, const ParamSet& init, const MetaConfig& config,
                     const MetaTrainOptions& options = {});

/// Online stage: `steps` gradient steps on the target support set.
ParamSet finetune(const Regressor& model, const ParamSet& theta, std::span<const FingerprintRecord> support,
                  double alpha, int steps);

std::vector<Point2> predict(const Regressor& model, const ParamSet& theta, std::span<const FingerprintRecord> query);

}  // namespace csiloc

#endif  // CSILOC_META_ENGINE_HPP
