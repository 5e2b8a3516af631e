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

#ifndef CSILOC_TASK_SAMPLER_HPP
#define CSILOC_TASK_SAMPLER_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "csiloc/csi_data.hpp"

namespace csiloc {

/// Disjoint support / query reference-point pools of one area.
struct RpSplit {
  std::vector<RefPoint> support;
  std::vector<RefPoint> query;
};

/// Seeded partition with |support| = round(fraction * |rps|).
RpSplit split_rps(std::span<const RefPoint> rps, double support_fraction, std::uint64_t seed);

/// One sampled localization task: K records per support RP, K' per query RP.
struct Task {
  TaskKey key;
  std::vector<FingerprintRecord> support;
  std::vector<FingerprintRecord> query;
};

/// Draws K samples from every support RP and K' from every query RP, without
/// replacement. Throws DataError naming the first RP with too few samples.
Task sample_task(const TaskData& data, const DatasetManifest& manifest, const RpSplit& split,
                 std::size_t k_support, std::size_t k_query, std::uint64_t seed);

/// A task the sampler can draw from repeatedly.
struct TaskSource {
  TaskKey key;
  RpSplit split;
};

/// Training tasks plus the held-out target; owns a handle on the dataset.
class TaskSet {
 public:
  TaskSet(std::shared_ptr<const Dataset> dataset, std::vector<TaskSource> training, TaskSource target);

  const Dataset& dataset() const noexcept { return *dataset_; }
  std::shared_ptr<const Dataset> dataset_ptr() const noexcept { return dataset_; }
  const std::vector<TaskSource>& training() const noexcept { return training_; }
  const TaskSource& target() const noexcept { return target_; }
  std::size_t num_training() const noexcept { return training_.size(); }

  Task sample_training(std::size_t index, std::size_t k_support, std::size_t k_query,
                       std::uint64_t seed) const;
  Task sample_target(std::size_t k_support, std::size_t k_query, std::uint64_t seed) const;

 private:
  std::shared_ptr<const Dataset> dataset_;
  std::vector<TaskSource> training_;
  TaskSource target_;
};

/// Splits every area's RPs once (seeded per area) and makes every other task of
/// the dataset a training task unless `training` restricts the list.
TaskSet make_task_set(std::shared_ptr<const Dataset> dataset, const TaskKey& target,
                      double support_fraction, std::uint64_t split_seed,
                      const std::optional<std::vector<TaskKey>>& training = std::nullopt);

/// B distinct training-task indices drawn uniformly without replacement.
std::vector<std::size_t> sample_meta_batch(const TaskSet& tasks, std::size_t batch_size,
                                           std::uint64_t seed);

/// One epoch: a seeded permutation of [0, M) cut into ceil(M / B) batches; the
/// last batch holds the remainder.
std::vector<std::vector<std::size_t>> plan_epoch(std::size_t num_tasks, std::size_t batch_size,
                                                 std::uint64_t seed);

}  // namespace csiloc

#endif  // CSILOC_TASK_SAMPLER_HPP
