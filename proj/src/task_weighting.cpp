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

#include "csiloc/task_weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "csiloc/errors.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "raw") return FeatureMode::raw;
  if (s == "embed") return FeatureMode::embed;
  throw std::invalid_argument("unknown feature mode '" + s + "' (expected raw or embed)");
}

std::string to_string(FeatureMode m) { return m == FeatureMode::raw ? "raw" : "embed"; }

WeightingMode parse_weighting_mode(const std::string& s) {
  if (s == "w_dis") return WeightingMode::w_dis;
  if (s == "coral") return WeightingMode::coral;
  if (s == "mk_mmd") return WeightingMode::mk_mmd;
  if (s == "nw") return WeightingMode::nw;
  throw std::invalid_argument("unknown weighting mode '" + s + "' (expected w_dis, coral, mk_mmd or nw)");
}

std::string to_string(WeightingMode m) {
  switch (m) {
    case WeightingMode::w_dis: return "w_dis";
    case WeightingMode::coral: return "coral";
    case WeightingMode::mk_mmd: return "mk_mmd";
    case WeightingMode::nw: return "nw";
  }
  return "w_dis";
}

TaskCloud task_features(const Task& task, FeatureMode mode, const ConvRegressor* model, const ParamSet* params) {
  if (task.support.empty()) throw std::invalid_argument("task_features: empty support set");
  TaskCloud cloud;
  if (mode == FeatureMode::embed) {
    if (!model || !params) throw std::invalid_argument("task_features: embed mode needs a model and parameters");
    cloud.points = model->embed(*params, task.support);
    return cloud;
  }
  const std::size_t d = task.support.front().image->size();
  cloud.points.resize(static_cast<Eigen::Index>(task.support.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < task.support.size(); ++i) {
    const auto px = task.support[i].image->pixels();
    if (px.size() != d) throw ShapeError("task_features: support images differ in size");
    for (std::size_t j = 0; j < d; ++j) cloud.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[j];
  }
  return cloud;
}

TaskCloud task_features(const Task& task, const std::string& mode, const ConvRegressor* model,
                        const ParamSet* params) {
  return task_features(task, parse_feature_mode(mode), model, params);
}

// Shortest augmenting paths with row/column potentials, O(n^3).
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != cost.rows()) throw ShapeError("min_cost_assignment: cost matrix must be square");
  if (n == 0) return {};
  if (!cost.allFinite()) throw std::invalid_argument("min_cost_assignment: non-finite cost");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);  // match[col] = row, 1-based
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n);
  for (int j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
  return assignment;
}

Eigen::MatrixXd euclidean_costs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw ShapeError("euclidean_costs: feature dimensions differ");
  Eigen::MatrixXd c(a.rows(), b.rows());
#pragma omp parallel for schedule(static) if (a.rows() * b.rows() * a.cols() > 1000000)
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).norm();
  }
  return c;
}

namespace {

void check_pair(const TaskCloud& a, const TaskCloud& b, const char* what) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument(std::string(what) + ": empty cloud");
  if (a.dim() != b.dim()) throw ShapeError(std::string(what) + ": feature dimensions differ");
  if (!a.points.allFinite() || !b.points.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite feature");
}

Eigen::MatrixXd subsample_rows(const Eigen::MatrixXd& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 0x5ab5a3e1ULL);
  auto idx = sample_without_replacement(static_cast<std::size_t>(m.rows()), n, rng);
  std::sort(idx.begin(), idx.end());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), m.cols());
  for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

// Both clouds cut to the smaller size; the larger is subsampled.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> equalize(const TaskCloud& a, const TaskCloud& b, std::uint64_t seed) {
  const std::size_t n = std::min(a.size(), b.size());
  // Same stream whichever side is larger, so the distance is symmetric.
  return {a.size() > n ? subsample_rows(a.points, n, seed) : a.points,
          b.size() > n ? subsample_rows(b.points, n, seed) : b.points};
}

}  // namespace

double wasserstein_distance(const TaskCloud& a, const TaskCloud& b, std::uint64_t seed) {
  check_pair(a, b, "wasserstein_distance");
  const auto [pa, pb] = equalize(a, b, seed);
  const Eigen::MatrixXd cost = euclidean_costs(pa, pb);
  const auto assignment = min_cost_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost(static_cast<Eigen::Index>(i), assignment[i]);
  return total / static_cast<double>(assignment.size());
}

double coral_distance(const TaskCloud& a, const TaskCloud& b) {
  check_pair(a, b, "coral_distance");
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("coral_distance: each cloud needs at least 2 points");
  const Eigen::MatrixXd xa = a.points.rowwise() - a.points.colwise().mean();
  const Eigen::MatrixXd xb = b.points.rowwise() - b.points.colwise().mean();
  const double na = static_cast<double>(a.size() - 1), nb = static_cast<double>(b.size() - 1);
  const double d = static_cast<double>(a.dim());
  double frob;
  if (a.dim() <= std::max(a.size(), b.size())) {
    const Eigen::MatrixXd diff = xa.transpose() * xa / na - xb.transpose() * xb / nb;
    frob = diff.squaredNorm();
  } else {
    // ||Xa'Xa||^2 = ||Xa Xa'||^2 and <Xa'Xa, Xb'Xb> = ||Xa Xb'||^2 keep the work n x n.
    const double aa = (xa * xa.transpose()).squaredNorm() / (na * na);
    const double bb = (xb * xb.transpose()).squaredNorm() / (nb * nb);
    const double ab = (xa * xb.transpose()).squaredNorm() / (na * nb);
    frob = std::max(0.0, aa + bb - 2.0 * ab);
  }
  return frob / (4.0 * d * d);
}

double mmd2_unbiased(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bandwidth) {
  if (a.rows() != b.rows()) throw ShapeError("mmd2_unbiased: clouds must have equal size");
  if (a.cols() != b.cols()) throw ShapeError("mmd2_unbiased: feature dimensions differ");
  const Eigen::Index n = a.rows();
  if (n < 2) throw std::invalid_argument("mmd2_unbiased: need at least 2 points per cloud");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mmd2_unbiased: bandwidth must be positive");
  const double g = 1.0 / (2.0 * bandwidth * bandwidth);
  const auto k = [&](const auto& x, const auto& y) { return std::exp(-g * (x - y).squaredNorm()); };
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      sum += k(a.row(i), a.row(j)) + k(b.row(i), b.row(j)) - k(a.row(i), b.row(j)) - k(a.row(j), b.row(i));
    }
  }
  return sum / static_cast<double>(n * (n - 1));
}

double mk_mmd_distance(const TaskCloud& a, const TaskCloud& b, std::uint64_t seed) {
  check_pair(a, b, "mk_mmd_distance");
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("mk_mmd_distance: each cloud needs at least 2 points");
  const auto [pa, pb] = equalize(a, b, seed);
  Eigen::MatrixXd joint(pa.rows() + pb.rows(), pa.cols());
  joint << pa, pb;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(joint.rows() * (joint.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < joint.rows(); ++j) dists.push_back((joint.row(i) - joint.row(j)).norm());
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t h = dists.size() / 2;
  double median = dists.size() % 2 ? dists[h] : 0.5 * (dists[h - 1] + dists[h]);
  if (!(median > 0.0)) median = 1.0;
  double total = 0.0;
  for (const double f : {0.25, 0.5, 1.0, 2.0, 4.0}) total += mmd2_unbiased(pa, pb, f * median);
  return std::max(0.0, total / 5.0);
}

double task_distance(WeightingMode mode, const TaskCloud& a, const TaskCloud& b, std::uint64_t seed) {
  switch (mode) {
    case WeightingMode::w_dis: return wasserstein_distance(a, b, seed);
    case WeightingMode::coral: return coral_distance(a, b);
    case WeightingMode::mk_mmd: return mk_mmd_distance(a, b, seed);
    case WeightingMode::nw: return 0.0;
  }
  return 0.0;
}

std::vector<double> softmax_weights(std::span<const double> distances) {
  if (distances.empty()) return {};
  double lo = distances.front();
  for (const double d : distances) {
    if (!std::isfinite(d)) throw std::invalid_argument("softmax_weights: non-finite distance");
    lo = std::min(lo, d);
  }
  std::vector<double> w(distances.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(-(distances[i] - lo));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

std::vector<double> renormalize_batch(std::span<const double> raw) {
  if (raw.empty()) throw std::invalid_argument("renormalize_batch: empty batch");
  double sum = 0.0;
  for (const double x : raw) {
    if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("renormalize_batch: weights must be finite and >= 0");
    sum += x;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("renormalize_batch: all weights are zero");
  std::vector<double> w(raw.begin(), raw.end());
  for (double& x : w) x /= sum;
  return w;
}

WeightReport weights_from_distances(WeightingMode mode, FeatureMode features, const TaskKey& target,
                                    std::span<const TaskKey> keys, std::span<const double> distances) {
  if (keys.size() != distances.size()) throw ShapeError("weights_from_distances: keys and distances differ in length");
  WeightReport r;
  r.mode = mode;
  r.features = features;
  r.target = target;
  std::vector<double> w;
  if (mode == WeightingMode::nw) {
    w.assign(keys.size(), keys.empty() ? 0.0 : 1.0 / static_cast<double>(keys.size()));
  } else {
    w = softmax_weights(distances);
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    r.tasks.push_back({keys[i], mode == WeightingMode::nw ? 0.0 : distances[i], w[i], {}});
  }
  return r;
}

WeightReport compute_weights(WeightingMode mode, FeatureMode features, const TaskKey& target,
                             const TaskCloud& target_cloud, std::span<const TaskKey> keys,
                             std::span<const TaskCloud> clouds, std::uint64_t seed) {
  if (keys.size() != clouds.size()) throw ShapeError("compute_weights: keys and clouds differ in length");
  std::vector<double> d(keys.size(), 0.0);
  if (mode != WeightingMode::nw) {
    for (std::size_t i = 0; i < keys.size(); ++i) d[i] = task_distance(mode, target_cloud, clouds[i], mix64(seed + i));
  }
  return weights_from_distances(mode, features, target, keys, d);
}

void to_json(nlohmann::json& j, const WeightReport& r) {
  j = nlohmann::json::object();
  j["mode"] = to_string(r.mode);
  j["features"] = to_string(r.features);
  j["target"] = task_name(r.target);
  nlohmann::json tasks = nlohmann::json::object();
  for (const auto& t : r.tasks) {
    tasks[task_name(t.key)] = {{"distance", t.distance}, {"raw_weight", t.raw_weight}, {"batch_weight", t.batch_weights}};
  }
  j["tasks"] = std::move(tasks);
}

}  // namespace csiloc
