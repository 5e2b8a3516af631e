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

#ifndef CSILOC_EVALUATION_HPP
#define CSILOC_EVALUATION_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csiloc/inner_model.hpp"
#include "csiloc/meta_engine.hpp"
#include "csiloc/task_sampler.hpp"

namespace csiloc {

/// Per-sample Euclidean errors.
std::vector<double> euclidean_errors(std::span<const Point2> predictions, std::span<const Point2> labels);

/// Mean Euclidean distance in meters.
double med(std::span<const Point2> predictions, std::span<const Point2> labels);

struct CdfPoint {
  double error = 0.0;
  double fraction = 0.0;
};

/// Empirical CDF at the sorted unique error values.
std::vector<CdfPoint> cdf(std::span<const double> errors);

struct LocalizationReport {
  std::string method;  // e.g. "meta/w_dis" or "scratch"
  TaskKey target;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<double> errors;
  double med = 0.0;
  std::vector<CdfPoint> cdf;
};

LocalizationReport make_report(std::string method, const TaskKey& target, std::size_t k, std::uint64_t seed,
                               std::span<const Point2> predictions, std::span<const Point2> labels);

std::vector<Point2> labels_of(std::span<const FingerprintRecord> records);

/// Random init plus `steps` gradient steps on the target support, scored on
/// the target query. steps = 0 scores the untrained model.
LocalizationReport scratch_baseline(const Task& target, const Regressor& model, double alpha, int steps,
                                    std::uint64_t seed);

/// Finetunes `theta` on the target support and scores the target query.
LocalizationReport evaluate_adapted(const Task& target, const Regressor& model, const ParamSet& theta,
                                    double alpha, int steps, std::string method, std::uint64_t seed);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one value
};

MeanStd mean_std(std::span<const double> values);

struct SweepRow {
  std::size_t k = 0;
  MeanStd med;
  std::vector<double> per_seed;
};

/// A meta-trained initialization and the seed it was trained with.
struct SeedInit {
  std::uint64_t seed = 0;
  ParamSet theta;
};

/// Finetune + predict on the target for every K and seed. The target query
/// draw depends only on the seed, so rows differ only in the support size.
std::vector<SweepRow> k_sweep(const TaskSet& tasks, const Regressor& model, std::span<const SeedInit> inits,
                              const MetaConfig& config, std::span<const std::size_t> ks);

/// Per-area MEDs by method with a trailing mean row.
class ComparisonTable {
 public:
  /// cells[{area, method}] = MED. Every (area, method) pair must be present.
  ComparisonTable(const std::map<std::pair<std::string, std::string>, double>& cells,
                  std::vector<std::string> areas = {}, std::vector<std::string> methods = {});

  const std::vector<std::string>& areas() const noexcept { return areas_; }
  const std::vector<std::string>& methods() const noexcept { return methods_; }
  double value(std::size_t area, std::size_t method) const { return values_[area][method]; }
  double mean(std::size_t method) const { return means_[method]; }
  double mean(const std::string& method) const;

  std::string to_csv() const;
  std::string to_text() const;

 private:
  std::vector<std::string> areas_;
  std::vector<std::string> methods_;
  std::vector<std::vector<double>> values_;
  std::vector<double> means_;
};

ComparisonTable comparison_table(const std::map<std::pair<std::string, std::string>, double>& cells);

void to_json(nlohmann::json& j, const LocalizationReport& r);
void to_json(nlohmann::json& j, const SweepRow& r);
std::string cdf_csv(std::span<const CdfPoint> points);
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace csiloc

#endif  // CSILOC_EVALUATION_HPP
