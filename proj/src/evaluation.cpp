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

#include "csiloc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "csiloc/errors.hpp"

namespace csiloc {

std::vector<double> euclidean_errors(std::span<const Point2> predictions, std::span<const Point2> labels) {
  if (predictions.empty()) throw std::invalid_argument("med: empty input");
  if (predictions.size() != labels.size()) throw ShapeError("med: predictions and labels differ in length");
  std::vector<double> e(predictions.size());
  for (std::size_t i = 0; i < e.size(); ++i)
    e[i] = std::hypot(predictions[i].x - labels[i].x, predictions[i].y - labels[i].y);
  return e;
}

double med(std::span<const Point2> predictions, std::span<const Point2> labels) {
  const auto e = euclidean_errors(predictions, labels);
  double sum = 0.0;
  for (const double x : e) sum += x;
  return sum / static_cast<double>(e.size());
}

std::vector<CdfPoint> cdf(std::span<const double> errors) {
  if (errors.empty()) throw std::invalid_argument("cdf: empty input");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<CdfPoint> out;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    out.push_back({sorted[i], static_cast<double>(i + 1) / n});
  }
  return out;
}

namespace {

std::size_t samples_per_rp(std::span<const FingerprintRecord> support) {
  std::set<int> rps;
  for (const auto& r : support) rps.insert(r.rp.id);
  return rps.empty() ? 0 : support.size() / rps.size();
}

}  // namespace

LocalizationReport make_report(std::string method, const TaskKey& target, std::size_t k, std::uint64_t seed,
                               std::span<const Point2> predictions, std::span<const Point2> labels) {
  LocalizationReport r;
  r.method = std::move(method);
  r.target = target;
  r.k = k;
  r.seed = seed;
  r.errors = euclidean_errors(predictions, labels);
  double sum = 0.0;
  for (const double x : r.errors) sum += x;
  r.med = sum / static_cast<double>(r.errors.size());
  r.cdf = cdf(r.errors);
  return r;
}

std::vector<Point2> labels_of(std::span<const FingerprintRecord> records) {
  std::vector<Point2> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label());
  return out;
}

LocalizationReport evaluate_adapted(const Task& target, const Regressor& model, const ParamSet& theta,
                                    double alpha, int steps, std::string method, std::uint64_t seed) {
  const ParamSet tuned = steps > 0 ? finetune(model, theta, target.support, alpha, steps) : theta;
  const auto pred = predict(model, tuned, target.query);
  const auto labels = labels_of(target.query);
  return make_report(std::move(method), target.key, samples_per_rp(target.support), seed, pred, labels);
}

LocalizationReport scratch_baseline(const Task& target, const Regressor& model, double alpha, int steps,
                                    std::uint64_t seed) {
  if (steps < 0) throw std::invalid_argument("scratch_baseline: steps must be >= 0");
  const ParamSet init = model.init_params(seed);
  return evaluate_adapted(target, model, init, alpha, steps, "scratch", seed);
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: empty input");
  MeanStd r;
  for (const double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

std::vector<SweepRow> k_sweep(const TaskSet& tasks, const Regressor& model, std::span<const SeedInit> inits,
                              const MetaConfig& config, std::span<const std::size_t> ks) {
  if (inits.empty()) throw std::invalid_argument("k_sweep: no seeds");
  std::vector<SweepRow> rows;
  for (const std::size_t k : ks) {
    if (k < 1) throw DataError("k_sweep: K must be >= 1");
    SweepRow row;
    row.k = k;
    for (const auto& init : inits) {
      const Task target = tasks.sample_target(k, config.k_query, target_sample_seed(init.seed));
      const auto rep = evaluate_adapted(target, model, init.theta, config.alpha, config.finetune_steps,
                                        "meta/" + to_string(config.weighting), init.seed);
      row.per_seed.push_back(rep.med);
    }
    row.med = mean_std(row.per_seed);
    rows.push_back(std::move(row));
  }
  return rows;
}

ComparisonTable::ComparisonTable(const std::map<std::pair<std::string, std::string>, double>& cells,
                                 std::vector<std::string> areas, std::vector<std::string> methods)
    : areas_(std::move(areas)), methods_(std::move(methods)) {
  if (areas_.empty() || methods_.empty()) {
    std::set<std::string> a, m;
    for (const auto& [key, v] : cells) {
      a.insert(key.first);
      m.insert(key.second);
    }
    if (areas_.empty()) areas_.assign(a.begin(), a.end());
    if (methods_.empty()) methods_.assign(m.begin(), m.end());
  }
  if (areas_.empty() || methods_.empty()) throw DataError("comparison_table: no cells");
  values_.assign(areas_.size(), std::vector<double>(methods_.size(), 0.0));
  means_.assign(methods_.size(), 0.0);
  for (std::size_t i = 0; i < areas_.size(); ++i) {
    for (std::size_t j = 0; j < methods_.size(); ++j) {
      const auto it = cells.find({areas_[i], methods_[j]});
      if (it == cells.end())
        throw DataError("comparison_table: missing cell (area " + areas_[i] + ", method " + methods_[j] + ")");
      values_[i][j] = it->second;
    }
  }
  // Sum in sorted area order so the mean does not depend on row order.
  std::vector<std::size_t> order(areas_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return areas_[a] < areas_[b]; });
  for (std::size_t j = 0; j < methods_.size(); ++j) {
    double sum = 0.0;
    for (const auto i : order) sum += values_[i][j];
    means_[j] = sum / static_cast<double>(areas_.size());
  }
}

double ComparisonTable::mean(const std::string& method) const {
  const auto it = std::find(methods_.begin(), methods_.end(), method);
  if (it == methods_.end()) throw DataError("comparison_table: unknown method " + method);
  return means_[static_cast<std::size_t>(it - methods_.begin())];
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream os;
  os << "area";
  for (const auto& m : methods_) os << ',' << m;
  os << '\n' << std::setprecision(6) << std::fixed;
  for (std::size_t i = 0; i < areas_.size(); ++i) {
    os << areas_[i];
    for (std::size_t j = 0; j < methods_.size(); ++j) os << ',' << values_[i][j];
    os << '\n';
  }
  os << "Mean";
  for (const double m : means_) os << ',' << m;
  os << '\n';
  return os.str();
}

std::string ComparisonTable::to_text() const {
  std::size_t first = 4;
  for (const auto& a : areas_) first = std::max(first, a.size());
  std::vector<std::size_t> width(methods_.size(), 8);
  for (std::size_t j = 0; j < methods_.size(); ++j) width[j] = std::max(width[j], methods_[j].size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(first)) << "Area";
  for (std::size_t j = 0; j < methods_.size(); ++j) os << "  " << std::right << std::setw(static_cast<int>(width[j])) << methods_[j];
  os << '\n';
  const auto row = [&](const std::string& name, const auto& value) {
    os << std::left << std::setw(static_cast<int>(first)) << name;
    for (std::size_t j = 0; j < methods_.size(); ++j)
      os << "  " << std::right << std::setw(static_cast<int>(width[j])) << std::fixed << std::setprecision(3) << value(j);
    os << '\n';
  };
  for (std::size_t i = 0; i < areas_.size(); ++i) row(areas_[i], [&](std::size_t j) { return values_[i][j]; });
  row("Mean", [&](std::size_t j) { return means_[j]; });
  return os.str();
}

ComparisonTable comparison_table(const std::map<std::pair<std::string, std::string>, double>& cells) {
  return ComparisonTable(cells);
}

void to_json(nlohmann::json& j, const LocalizationReport& r) {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& p : r.cdf) c.push_back({p.error, p.fraction});
  j = {{"method", r.method}, {"target", task_name(r.target)}, {"k", r.k},      {"seed", r.seed},
       {"med_m", r.med},     {"errors_m", r.errors},          {"cdf", c}};
}

void to_json(nlohmann::json& j, const SweepRow& r) {
  j = {{"k", r.k}, {"med_mean", r.med.mean}, {"med_std", r.med.std}, {"per_seed", r.per_seed}};
}

std::string cdf_csv(std::span<const CdfPoint> points) {
  std::ostringstream os;
  os << "error_m,fraction\n" << std::setprecision(9);
  for (const auto& p : points) os << p.error << ',' << p.fraction << '\n';
  return os.str();
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "k,med_mean,med_std\n" << std::setprecision(9);
  for (const auto& r : rows) os << r.k << ',' << r.med.mean << ',' << r.med.std << '\n';
  return os.str();
}

}  // namespace csiloc
