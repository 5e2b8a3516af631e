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

#include "csiloc/task_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csiloc/errors.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

namespace {
enum : std::uint64_t { kTagSplit = 11, kTagSample = 12, kTagBatch = 13 };
}

RpSplit split_rps(std::span<const RefPoint> rps, double support_fraction, std::uint64_t seed) {
  if (rps.size() < 2) throw std::invalid_argument("split_rps: need at least 2 reference points");
  if (!(support_fraction > 0.0 && support_fraction < 1.0))
    throw std::invalid_argument("split_rps: support_fraction must lie in (0, 1)");
  const auto n_support =
      static_cast<std::size_t>(std::llround(support_fraction * static_cast<double>(rps.size())));
  if (n_support == 0 || n_support == rps.size())
    throw std::invalid_argument("split_rps: fraction " + std::to_string(support_fraction) +
                                " leaves one side empty for " + std::to_string(rps.size()) + " RPs");
  Rng rng = Rng(seed).substream({kTagSplit});
  std::vector<RefPoint> order(rps.begin(), rps.end());
  shuffle(order, rng);
  RpSplit split;
  split.support.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_support));
  split.query.assign(order.begin() + static_cast<std::ptrdiff_t>(n_support), order.end());
  const auto by_id = [](const RefPoint& a, const RefPoint& b) { return a.id < b.id; };
  std::sort(split.support.begin(), split.support.end(), by_id);
  std::sort(split.query.begin(), split.query.end(), by_id);
  return split;
}

namespace {

void draw(const TaskData& data, const RefPoint& rp, std::size_t k, const Rng& base,
          std::vector<FingerprintRecord>& out) {
  const auto it = data.samples_by_rp.find(rp.id);
  const std::size_t stored = it == data.samples_by_rp.end() ? 0 : it->second.size();
  if (stored < k) {
    throw DataError("task " + task_name(data.key) + ": reference point " + std::to_string(rp.id) +
                    " has " + std::to_string(stored) + " samples, need " + std::to_string(k));
  }
  Rng rng = base.substream({static_cast<std::uint64_t>(rp.id)});
  for (const std::size_t idx : sample_without_replacement(stored, k, rng)) {
    out.push_back({rp, it->second[idx],
                   {data.key.area, data.key.posture, rp.id, static_cast<int>(idx)}});
  }
}

}  // namespace

Task sample_task(const TaskData& data, const DatasetManifest& manifest, const RpSplit& split,
                 std::size_t k_support, std::size_t k_query, std::uint64_t seed) {
  if (k_support == 0 || k_query == 0) throw std::invalid_argument("sample_task: K and K' must be >= 1");
  const Rng base = Rng(seed).substream({kTagSample, static_cast<std::uint64_t>(data.key.area),
                                        static_cast<std::uint64_t>(data.key.posture)});
  Task task;
  task.key = data.key;
  // Labels come from the manifest so a stale split cannot relabel samples.
  for (const auto& rp : split.support) draw(data, manifest.rp(rp.id), k_support, base.substream({0}), task.support);
  for (const auto& rp : split.query) draw(data, manifest.rp(rp.id), k_query, base.substream({1}), task.query);
  return task;
}

TaskSet::TaskSet(std::shared_ptr<const Dataset> dataset, std::vector<TaskSource> training,
                 TaskSource target)
    : dataset_(std::move(dataset)), training_(std::move(training)), target_(std::move(target)) {
  if (!dataset_) throw std::invalid_argument("TaskSet: null dataset");
  if (training_.empty()) throw std::invalid_argument("TaskSet: need at least one training task");
  for (const auto& t : training_) {
    if (t.key == target_.key)
      throw std::invalid_argument("TaskSet: target task " + task_name(target_.key) + " is in the training list");
  }
}

Task TaskSet::sample_training(std::size_t index, std::size_t k_support, std::size_t k_query,
                              std::uint64_t seed) const {
  const TaskSource& src = training_.at(index);
  return sample_task(dataset_->task(src.key), dataset_->manifest, src.split, k_support, k_query, seed);
}

Task TaskSet::sample_target(std::size_t k_support, std::size_t k_query, std::uint64_t seed) const {
  return sample_task(dataset_->task(target_.key), dataset_->manifest, target_.split, k_support,
                     k_query, seed);
}

TaskSet make_task_set(std::shared_ptr<const Dataset> dataset, const TaskKey& target,
                      double support_fraction, std::uint64_t split_seed,
                      const std::optional<std::vector<TaskKey>>& training) {
  if (!dataset) throw std::invalid_argument("make_task_set: null dataset");
  std::map<int, RpSplit> splits;
  const auto split_for = [&](int area) -> const RpSplit& {
    auto it = splits.find(area);
    if (it == splits.end()) {
      const auto rps = dataset->manifest.rps_in_area(area);
      it = splits.emplace(area, split_rps(rps, support_fraction, mix64(split_seed ^ static_cast<std::uint64_t>(area)))).first;
    }
    return it->second;
  };
  dataset->task(target);  // throws if absent
  std::vector<TaskSource> sources;
  if (training) {
    for (const auto& key : *training) {
      dataset->task(key);
      sources.push_back({key, split_for(key.area)});
    }
  } else {
    for (const auto& t : dataset->tasks) {
      if (t.key == target) continue;
      sources.push_back({t.key, split_for(t.key.area)});
    }
  }
  return TaskSet(dataset, std::move(sources), {target, split_for(target.area)});
}

std::vector<std::size_t> sample_meta_batch(const TaskSet& tasks, std::size_t batch_size,
                                           std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("sample_meta_batch: B must be >= 1");
  if (batch_size > tasks.num_training())
    throw std::invalid_argument("sample_meta_batch: B = " + std::to_string(batch_size) +
                                " exceeds M = " + std::to_string(tasks.num_training()));
  Rng rng = Rng(seed).substream({kTagBatch});
  return sample_without_replacement(tasks.num_training(), batch_size, rng);
}

std::vector<std::vector<std::size_t>> plan_epoch(std::size_t num_tasks, std::size_t batch_size,
                                                 std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("plan_epoch: B must be >= 1");
  Rng rng = Rng(seed).substream({kTagBatch});
  const auto order = sample_without_replacement(num_tasks, num_tasks, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, order.size())));
  }
  return batches;
}

}  // namespace csiloc
