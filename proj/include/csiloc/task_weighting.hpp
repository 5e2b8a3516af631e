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

#ifndef CSILOC_TASK_WEIGHTING_HPP
#define CSILOC_TASK_WEIGHTING_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "csiloc/inner_model.hpp"
#include "csiloc/task_sampler.hpp"

namespace csiloc {

/// Empirical distribution of one task: one feature vector per row.
struct TaskCloud {
  Eigen::MatrixXd points;

  std::size_t size() const noexcept { return static_cast<std::size_t>(points.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(points.cols()); }
};

enum class FeatureMode { raw, embed };
enum class WeightingMode { w_dis, coral, mk_mmd, nw };

FeatureMode parse_feature_mode(const std::string& s);
std::string to_string(FeatureMode m);
WeightingMode parse_weighting_mode(const std::string& s);
std::string to_string(WeightingMode m);

/// Raw mode flattens every support image; embed mode needs `model` and
/// `params` and returns the penultimate activations.
TaskCloud task_features(const Task& task, FeatureMode mode, const ConvRegressor* model = nullptr,
                        const ParamSet* params = nullptr);
TaskCloud task_features(const Task& task, const std::string& mode, const ConvRegressor* model = nullptr,
                        const ParamSet* params = nullptr);

/// Minimum-cost perfect matching on a square cost matrix; result[i] is the
/// column assigned to row i.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost);

/// Pairwise Euclidean distances, rows of `a` against rows of `b`.
Eigen::MatrixXd euclidean_costs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Exact W-1 between equal-weight empirical measures. The larger cloud is
/// subsampled (seeded) down to the smaller size.
double wasserstein_distance(const TaskCloud& a, const TaskCloud& b, std::uint64_t seed = 0);

/// ||Cov(A) - Cov(B)||_F^2 / (4 d^2), sample covariances.
double coral_distance(const TaskCloud& a, const TaskCloud& b);

/// Unbiased paired MMD^2 with one Gaussian kernel exp(-|x-y|^2 / (2 s^2)).
/// Both clouds must have the same size.
double mmd2_unbiased(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bandwidth);

/// Kernel bank {m/4, m/2, m, 2m, 4m} around the median pairwise distance m of
/// the joint cloud; averaged and clamped at zero.
double mk_mmd_distance(const TaskCloud& a, const TaskCloud& b, std::uint64_t seed = 0);

/// Distance under `mode`; nw has no distance and returns 0.
double task_distance(WeightingMode mode, const TaskCloud& a, const TaskCloud& b, std::uint64_t seed = 0);

/// softmax(-d) with max subtraction.
std::vector<double> softmax_weights(std::span<const double> distances);

/// Rescales nonnegative weights of one meta-batch to sum to one.
std::vector<double> renormalize_batch(std::span<const double> raw);

struct TaskWeightEntry {
  TaskKey key;
  double distance = 0.0;
  double raw_weight = 0.0;
  std::vector<double> batch_weights;  // one per meta-batch the task appeared in
};

struct WeightReport {
  WeightingMode mode = WeightingMode::w_dis;
  FeatureMode features = FeatureMode::raw;
  TaskKey target;
  std::vector<TaskWeightEntry> tasks;  // training order
};

/// Distances from the target cloud to every training cloud and their softmax
/// weights. nw mode yields uniform weights and zero distances.
WeightReport compute_weights(WeightingMode mode, FeatureMode features, const TaskKey& target,
                             const TaskCloud& target_cloud, std::span<const TaskKey> keys,
                             std::span<const TaskCloud> clouds, std::uint64_t seed = 0);

/// Same from precomputed distances.
WeightReport weights_from_distances(WeightingMode mode, FeatureMode features, const TaskKey& target,
                                    std::span<const TaskKey> keys, std::span<const double> distances);

void to_json(nlohmann::json& j, const WeightReport& r);

}  // namespace csiloc

#endif  // CSILOC_TASK_WEIGHTING_HPP
