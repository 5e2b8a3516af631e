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

#ifndef CSILOC_INNER_MODEL_HPP
#define CSILOC_INNER_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "csiloc/csi_data.hpp"
#include "csiloc/param_set.hpp"

namespace csiloc {

enum class Activation { relu, tanh, identity };

struct ConvStage {
  int out_channels = 8;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  Activation activation = Activation::relu;
  bool pool = true;  // 2x2 max-pool, stride 2, floor
};

/// Four conv stages and one fully connected layer to `output_dim` outputs.
/// Weight init: fan_in_uniform draws U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// he_uniform draws U(-sqrt(6/fan_in), sqrt(6/fan_in)). Biases start at zero.
enum class InitScheme { fan_in_uniform, he_uniform };

struct ModelSpec {
  int in_channels = 3;
  int in_height = 60;
  int in_width = 60;
  std::vector<ConvStage> stages;
  int output_dim = 2;
  InitScheme init = InitScheme::fan_in_uniform;

  struct StageShape {
    int in_c, in_h, in_w;
    int conv_h, conv_w;
    int out_h, out_w;
  };

  /// 3x3/stride 1/pad 1 convs with 8, 16, 32, 32 channels, ReLU, max-pool
  /// after the first three.
  static ModelSpec reference(int channels = 3, int height = 60, int width = 60);

  /// Throws ShapeError when any stage collapses to an empty map.
  std::vector<StageShape> shape_chain() const;
  /// Flattened size of the last conv stage, i.e. the fc input width.
  int penultimate_width() const;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> param_shapes() const;
  std::vector<std::string> validate() const;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// (1/n) sum_i ||pred_i - label_i||^2.
double mse_loss(std::span<const Point2> predictions, std::span<const Point2> labels);

/// A model evaluated functionally: parameters are always passed in, never held.
class Regressor {
 public:
  virtual ~Regressor() = default;

  virtual ParamSet init_params(std::uint64_t seed) const = 0;
  virtual std::vector<Point2> predict(const ParamSet& params,
                                      std::span<const FingerprintRecord> batch) const = 0;
  /// Mean squared error over the batch; fills `grad` when non-null.
  virtual double loss_and_grad(const ParamSet& params, std::span<const FingerprintRecord> batch,
                               ParamSet* grad) const = 0;
  /// Hessian of the batch loss at `params` applied to `direction`.
  virtual ParamSet hvp(const ParamSet& params, std::span<const FingerprintRecord> batch,
                       const ParamSet& direction) const = 0;

  double loss(const ParamSet& params, std::span<const FingerprintRecord> batch) const {
    return loss_and_grad(params, batch, nullptr);
  }
  ParamSet grad(const ParamSet& params, std::span<const FingerprintRecord> batch) const {
    ParamSet g;
    loss_and_grad(params, batch, &g);
    return g;
  }
};

enum class Precision { f32, f64 };

/// The convolutional localization network of a ModelSpec.
///
/// Inputs are normalized per channel with `stats` before the first conv.
/// Batches are processed in fixed-size chunks whose partial sums are reduced
/// in chunk order, so results do not depend on the worker count.
class ConvRegressor final : public Regressor {
 public:
  explicit ConvRegressor(ModelSpec spec, Precision precision = Precision::f32,
                         ChannelStats stats = {});

  const ModelSpec& spec() const noexcept { return spec_; }
  Precision precision() const noexcept { return precision_; }
  const ChannelStats& stats() const noexcept { return stats_; }
  void set_chunk_size(std::size_t n) { chunk_ = n == 0 ? 1 : n; }

  ParamSet init_params(std::uint64_t seed) const override;
  std::vector<Point2> predict(const ParamSet& params,
                              std::span<const FingerprintRecord> batch) const override;
  double loss_and_grad(const ParamSet& params, std::span<const FingerprintRecord> batch,
                       ParamSet* grad) const override;
  ParamSet hvp(const ParamSet& params, std::span<const FingerprintRecord> batch,
               const ParamSet& direction) const override;

  /// Penultimate activations (flattened last conv output), one row per record.
  Eigen::MatrixXd embed(const ParamSet& params, std::span<const FingerprintRecord> batch) const;

 private:
  void check(const ParamSet& params, std::span<const FingerprintRecord> batch) const;

  ModelSpec spec_;
  std::vector<ModelSpec::StageShape> shapes_;
  ParamSet layout_;
  Precision precision_;
  ChannelStats stats_;
  std::size_t chunk_ = 16;
};

}  // namespace csiloc

#endif  // CSILOC_INNER_MODEL_HPP
