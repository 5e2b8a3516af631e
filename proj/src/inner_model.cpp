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

#define EIGEN_DONT_PARALLELIZE
#include "csiloc/inner_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "csiloc/dual.hpp"
#include "csiloc/errors.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

ModelSpec ModelSpec::reference(int channels, int height, int width) {
  ModelSpec s;
  s.in_channels = channels;
  s.in_height = height;
  s.in_width = width;
  s.stages = {{8, 3, 1, 1, Activation::relu, true},
              {16, 3, 1, 1, Activation::relu, true},
              {32, 3, 1, 1, Activation::relu, true},
              {32, 3, 1, 1, Activation::relu, false}};
  return s;
}

std::vector<ModelSpec::StageShape> ModelSpec::shape_chain() const {
  std::vector<StageShape> chain;
  int c = in_channels, h = in_height, w = in_width;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const ConvStage& st = stages[i];
    StageShape s{c, h, w, 0, 0, 0, 0};
    s.conv_h = (h + 2 * st.padding - st.kernel) / st.stride + 1;
    s.conv_w = (w + 2 * st.padding - st.kernel) / st.stride + 1;
    if (h + 2 * st.padding < st.kernel || w + 2 * st.padding < st.kernel || s.conv_h < 1 || s.conv_w < 1)
      throw ShapeError("ModelSpec: conv stage " + std::to_string(i + 1) + " produces an empty map");
    s.out_h = st.pool ? s.conv_h / 2 : s.conv_h;
    s.out_w = st.pool ? s.conv_w / 2 : s.conv_w;
    if (s.out_h < 1 || s.out_w < 1)
      throw ShapeError("ModelSpec: pooling after stage " + std::to_string(i + 1) + " produces an empty map");
    chain.push_back(s);
    c = st.out_channels;
    h = s.out_h;
    w = s.out_w;
  }
  return chain;
}

int ModelSpec::penultimate_width() const {
  const auto chain = shape_chain();
  return stages.back().out_channels * chain.back().out_h * chain.back().out_w;
}

std::vector<std::string> ModelSpec::validate() const {
  std::vector<std::string> errors;
  if (in_channels < 1 || in_height < 1 || in_width < 1) errors.push_back("model.input: dimensions must be >= 1");
  if (stages.size() != 4) errors.push_back("model.stages: exactly 4 conv stages required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string at = "model.stages[" + std::to_string(i) + "]";
    if (s.out_channels < 1) errors.push_back(at + ".out_channels: must be >= 1");
    if (s.kernel < 1) errors.push_back(at + ".kernel: must be >= 1");
    if (s.stride < 1) errors.push_back(at + ".stride: must be >= 1");
    if (s.padding < 0) errors.push_back(at + ".padding: must be >= 0");
  }
  if (output_dim != 2) errors.push_back("model.output_dim: must be 2");
  if (errors.empty()) {
    try {
      shape_chain();
    } catch (const ShapeError& e) {
      errors.push_back(std::string("model: ") + e.what());
    }
  }
  return errors;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> ModelSpec::param_shapes() const {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
  std::size_t in_c = static_cast<std::size_t>(in_channels);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto out_c = static_cast<std::size_t>(stages[i].out_channels);
    const auto k = static_cast<std::size_t>(stages[i].kernel);
    const std::string name = "conv" + std::to_string(i + 1);
    shapes.push_back({name + ".weight", {out_c, in_c, k, k}});
    shapes.push_back({name + ".bias", {out_c}});
    in_c = out_c;
  }
  const auto out = static_cast<std::size_t>(output_dim);
  shapes.push_back({"fc.weight", {out, static_cast<std::size_t>(penultimate_width())}});
  shapes.push_back({"fc.bias", {out}});
  return shapes;
}

namespace {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "relu";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"input", {s.in_channels, s.in_height, s.in_width}},
       {"output_dim", s.output_dim},
       {"init", s.init == InitScheme::he_uniform ? "he_uniform" : "fan_in_uniform"}};
  j["stages"] = nlohmann::json::array();
  for (const auto& st : s.stages) {
    j["stages"].push_back({{"out_channels", st.out_channels},
                           {"kernel", st.kernel},
                           {"stride", st.stride},
                           {"padding", st.padding},
                           {"activation", activation_name(st.activation)},
                           {"pool", st.pool}});
  }
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s = ModelSpec::reference();
  if (j.contains("input")) {
    const auto in = j.at("input").get<std::vector<int>>();
    if (in.size() != 3) throw std::invalid_argument("model.input: expected [C, H, W]");
    s.in_channels = in[0];
    s.in_height = in[1];
    s.in_width = in[2];
  }
  s.output_dim = j.value("output_dim", 2);
  const std::string init = j.value("init", std::string("fan_in_uniform"));
  if (init == "he_uniform") s.init = InitScheme::he_uniform;
  else if (init == "fan_in_uniform") s.init = InitScheme::fan_in_uniform;
  else throw std::invalid_argument("model.init: unknown scheme '" + init + "'");
  if (j.contains("stages")) {
    s.stages.clear();
    for (const auto& st : j.at("stages")) {
      ConvStage c;
      c.out_channels = st.value("out_channels", c.out_channels);
      c.kernel = st.value("kernel", c.kernel);
      c.stride = st.value("stride", c.stride);
      c.padding = st.value("padding", c.padding);
      c.activation = parse_activation(st.value("activation", std::string("relu")));
      c.pool = st.value("pool", c.pool);
      s.stages.push_back(c);
    }
  }
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  const auto errors = spec.validate();
  if (!errors.empty()) throw ShapeError("init_params: " + errors.front());
  ParamSet params = ParamSet::zeros(spec.param_shapes());
  const Rng root(seed);
  std::uint64_t layer = 0;
  for (const auto& block : params.layout().blocks) {
    ++layer;
    if (block.shape.size() < 2) continue;  // biases stay zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < block.shape.size(); ++d) fan_in *= block.shape[d];
    const double bound = std::sqrt((spec.init == InitScheme::he_uniform ? 6.0 : 1.0) / static_cast<double>(fan_in));
    Rng rng = root.substream({layer});
    for (double& w : params[block.name]) w = rng.uniform(-bound, bound);
  }
  return params;
}

double mse_loss(std::span<const Point2> predictions, std::span<const Point2> labels) {
  if (predictions.empty()) throw std::invalid_argument("mse_loss: empty batch");
  if (predictions.size() != labels.size()) throw ShapeError("mse_loss: batch sizes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double dx = predictions[i].x - labels[i].x;
    const double dy = predictions[i].y - labels[i].y;
    sum += dx * dx + dy * dy;
  }
  return sum / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

template <class R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M x N] (+)= op(A) op(B); row-major; A is (M x K) or, transposed, (K x M).
template <class R>
void gemm_real(bool ta, bool tb, int m, int n, int k, const R* a, const R* b, R* c, bool accumulate) {
  using Map = Eigen::Map<const RowMat<R>>;
  const Map am(a, ta ? k : m, ta ? m : k);
  const Map bm(b, tb ? n : k, tb ? k : n);
  Eigen::Map<RowMat<R>> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (ta && tb) cm.noalias() += am.transpose() * bm.transpose();
  else if (ta) cm.noalias() += am.transpose() * bm;
  else if (tb) cm.noalias() += am * bm.transpose();
  else cm.noalias() += am * bm;
}

template <class T>
struct Gemm {
  static void run(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
    gemm_real<T>(ta, tb, m, n, k, a, b, c, acc);
  }
};

// A dual product splits into three real products: (Av Bv, Av Bd + Ad Bv).
template <class R>
struct Gemm<Dual<R>> {
  static void run(bool ta, bool tb, int m, int n, int k, const Dual<R>* a, const Dual<R>* b,
                  Dual<R>* c, bool acc) {
    const std::size_t na = static_cast<std::size_t>(m) * k, nb = static_cast<std::size_t>(k) * n;
    const std::size_t nc = static_cast<std::size_t>(m) * n;
    thread_local std::vector<R> av, ad, bv, bd, cv, cd;
    av.resize(na);
    ad.resize(na);
    bv.resize(nb);
    bd.resize(nb);
    cv.resize(nc);
    cd.assign(nc, R(0));
    bool a_tangent = false, b_tangent = false;
    for (std::size_t i = 0; i < na; ++i) {
      av[i] = a[i].v;
      ad[i] = a[i].d;
      a_tangent |= a[i].d != R(0);
    }
    for (std::size_t i = 0; i < nb; ++i) {
      bv[i] = b[i].v;
      bd[i] = b[i].d;
      b_tangent |= b[i].d != R(0);
    }
    gemm_real<R>(ta, tb, m, n, k, av.data(), bv.data(), cv.data(), false);
    if (b_tangent) gemm_real<R>(ta, tb, m, n, k, av.data(), bd.data(), cd.data(), true);
    if (a_tangent) gemm_real<R>(ta, tb, m, n, k, ad.data(), bv.data(), cd.data(), true);
    for (std::size_t i = 0; i < nc; ++i) {
      if (acc) {
        c[i].v += cv[i];
        c[i].d += cd[i];
      } else {
        c[i] = {cv[i], cd[i]};
      }
    }
  }
};

template <class T>
void gemm(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  Gemm<T>::run(ta, tb, m, n, k, a, b, c, acc);
}

template <class T>
T activate(Activation a, const T& x) {
  switch (a) {
    case Activation::relu: return primal(x) > 0 ? x : T(0);
    case Activation::tanh: {
      using std::tanh;
      return tanh(x);
    }
    case Activation::identity: return x;
  }
  return x;
}

// d act / d pre, expressed through `pre` and `act` so the dual tangent carries
// the second derivative.
template <class T>
T activation_slope(Activation a, const T& pre, const T& act) {
  switch (a) {
    case Activation::relu: return primal(pre) > 0 ? T(1) : T(0);
    case Activation::tanh: return T(1) - act * act;
    case Activation::identity: return T(1);
  }
  return T(1);
}

template <class T>
struct StageBuffers {
  std::vector<T> col;   // (C_in k k) x P
  std::vector<T> pre;   // C_out x P
  std::vector<T> act;   // C_out x P
  std::vector<T> out;   // pooled or act
  std::vector<std::uint32_t> argmax;
};

// Output columns [lo, hi) of a conv row whose input column stays inside [0, w).
inline void valid_range(int ow, int w, int stride, int offset, int& lo, int& hi) {
  lo = 0;
  while (lo < ow && lo * stride + offset < 0) ++lo;
  hi = ow;
  while (hi > lo && (hi - 1) * stride + offset >= w) --hi;
}

// Activations are laid out channel-major across the chunk: [C][N][H][W].
template <class T>
void im2col(const T* x, int c_in, int n, int h, int w, const ConvStage& st, int oh, int ow, std::vector<T>& col) {
  const int k = st.kernel;
  const std::size_t p = static_cast<std::size_t>(n) * oh * ow;
  col.resize(static_cast<std::size_t>(c_in) * k * k * p);
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * p;
        const int off = kj - st.padding;
        int lo, hi;
        valid_range(ow, w, st.stride, off, lo, hi);
        for (int s = 0; s < n; ++s) {
          const T* plane = x + (static_cast<std::size_t>(c) * n + s) * h * w;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * st.stride - st.padding + ki;
            T* dst = row + (static_cast<std::size_t>(s) * oh + y) * ow;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + ow, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * w;
            std::fill(dst, dst + lo, T(0));
            if (st.stride == 1) {
              std::copy(src + lo + off, src + hi + off, dst + lo);
            } else {
              for (int xo = lo; xo < hi; ++xo) dst[xo] = src[xo * st.stride + off];
            }
            std::fill(dst + hi, dst + ow, T(0));
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const std::vector<T>& col, int c_in, int n, int h, int w, const ConvStage& st, int oh, int ow,
            std::vector<T>& gx) {
  const int k = st.kernel;
  const std::size_t p = static_cast<std::size_t>(n) * oh * ow;
  gx.assign(static_cast<std::size_t>(c_in) * n * h * w, T(0));
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * p;
        const int off = kj - st.padding;
        int lo, hi;
        valid_range(ow, w, st.stride, off, lo, hi);
        for (int s = 0; s < n; ++s) {
          T* plane = gx.data() + (static_cast<std::size_t>(c) * n + s) * h * w;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * st.stride - st.padding + ki;
            if (iy < 0 || iy >= h) continue;
            const T* src = row + (static_cast<std::size_t>(s) * oh + y) * ow;
            T* dst = plane + static_cast<std::size_t>(iy) * w;
            for (int xo = lo; xo < hi; ++xo) dst[xo * st.stride + off] += src[xo];
          }
        }
      }
    }
  }
}

/// One forward/backward evaluation of the network over a chunk of records.
template <class T>
class Network {
 public:
  Network(const ModelSpec& spec, const std::vector<ModelSpec::StageShape>& shapes,
          const ParamSet::Layout& layout, const std::vector<T>& params, const ChannelStats& stats)
      : spec_(spec), shapes_(shapes), params_(params), stats_(stats) {
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      weight_off_.push_back(layout.block(name + ".weight").offset);
      bias_off_.push_back(layout.block(name + ".bias").offset);
    }
    fc_w_off_ = layout.block("fc.weight").offset;
    fc_b_off_ = layout.block("fc.bias").offset;
    features_ = spec.penultimate_width();
  }

  std::size_t num_params() const { return params_.size(); }
  int features() const { return features_; }

  /// Fills predictions as [2][N] and keeps what backward needs.
  void forward(std::span<const FingerprintRecord> chunk, std::vector<T>& pred) {
    n_ = static_cast<int>(chunk.size());
    load(chunk);
    const T* x = input_.data();
    bufs_.resize(spec_.stages.size());
    for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
      const ConvStage& st = spec_.stages[s];
      const auto& sh = shapes_[s];
      StageBuffers<T>& b = bufs_[s];
      const int ck = sh.in_c * st.kernel * st.kernel;
      const int p = n_ * sh.conv_h * sh.conv_w;
      im2col(x, sh.in_c, n_, sh.in_h, sh.in_w, st, sh.conv_h, sh.conv_w, b.col);
      b.pre.resize(static_cast<std::size_t>(st.out_channels) * p);
      gemm<T>(false, false, st.out_channels, p, ck, params_.data() + weight_off_[s], b.col.data(), b.pre.data(), false);
      b.act.resize(b.pre.size());
      for (int c = 0; c < st.out_channels; ++c) {
        const T bias = params_[bias_off_[s] + c];
        T* pre = b.pre.data() + static_cast<std::size_t>(c) * p;
        T* act = b.act.data() + static_cast<std::size_t>(c) * p;
        for (int i = 0; i < p; ++i) {
          pre[i] += bias;
          act[i] = activate(st.activation, pre[i]);
        }
      }
      if (st.pool) {
        pool(b, st.out_channels, sh);
        x = b.out.data();
      } else {
        x = b.act.data();
      }
    }
    // Flatten the last map per sample: feat[f][n], f = (c, h, w).
    const auto& last = shapes_.back();
    const int hw = last.out_h * last.out_w;
    const int c_last = spec_.stages.back().out_channels;
    feat_.assign(static_cast<std::size_t>(features_) * n_, T(0));
    for (int c = 0; c < c_last; ++c) {
      for (int s = 0; s < n_; ++s) {
        for (int i = 0; i < hw; ++i) {
          feat_[(static_cast<std::size_t>(c) * hw + i) * n_ + s] = x[(static_cast<std::size_t>(c) * n_ + s) * hw + i];
        }
      }
    }
    const int out = spec_.output_dim;
    pred.resize(static_cast<std::size_t>(out) * n_);
    gemm<T>(false, false, out, n_, features_, params_.data() + fc_w_off_, feat_.data(), pred.data(), false);
    for (int o = 0; o < out; ++o) {
      for (int s = 0; s < n_; ++s) pred[static_cast<std::size_t>(o) * n_ + s] += params_[fc_b_off_ + o];
    }
  }

  const std::vector<T>& features_matrix() const { return feat_; }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(pred) as [2][N].
  void backward(const std::vector<T>& gpred, std::vector<T>& grad) {
    const int out = spec_.output_dim;
    gemm<T>(false, true, out, features_, n_, gpred.data(), feat_.data(), grad.data() + fc_w_off_, true);
    for (int o = 0; o < out; ++o) {
      for (int s = 0; s < n_; ++s) grad[fc_b_off_ + o] += gpred[static_cast<std::size_t>(o) * n_ + s];
    }
    std::vector<T>& gfeat = gfeat_;
    gfeat.resize(static_cast<std::size_t>(features_) * n_);
    gemm<T>(true, false, features_, n_, out, params_.data() + fc_w_off_, gpred.data(), gfeat.data(), false);

    const auto& last = shapes_.back();
    const int hw = last.out_h * last.out_w;
    const int c_last = spec_.stages.back().out_channels;
    std::vector<T>& g_out = g_out_;
    g_out.resize(static_cast<std::size_t>(c_last) * n_ * hw);
    for (int c = 0; c < c_last; ++c) {
      for (int s = 0; s < n_; ++s) {
        for (int i = 0; i < hw; ++i) {
          g_out[(static_cast<std::size_t>(c) * n_ + s) * hw + i] = gfeat[(static_cast<std::size_t>(c) * hw + i) * n_ + s];
        }
      }
    }

    std::vector<T>& g_pre = g_pre_;
    std::vector<T>& gcol = gcol_;
    for (std::size_t si = spec_.stages.size(); si-- > 0;) {
      const ConvStage& st = spec_.stages[si];
      const auto& sh = shapes_[si];
      StageBuffers<T>& b = bufs_[si];
      const int ck = sh.in_c * st.kernel * st.kernel;
      const int p = n_ * sh.conv_h * sh.conv_w;
      if (st.pool) {
        g_pre.assign(b.act.size(), T(0));
        for (std::size_t i = 0; i < b.argmax.size(); ++i) g_pre[b.argmax[i]] += g_out[i];
      } else {
        g_pre.swap(g_out);
      }
      for (std::size_t i = 0; i < g_pre.size(); ++i) {
        g_pre[i] = g_pre[i] * activation_slope(st.activation, b.pre[i], b.act[i]);
      }
      gemm<T>(false, true, st.out_channels, ck, p, g_pre.data(), b.col.data(), grad.data() + weight_off_[si], true);
      for (int c = 0; c < st.out_channels; ++c) {
        T sum = T(0);
        const T* row = g_pre.data() + static_cast<std::size_t>(c) * p;
        for (int i = 0; i < p; ++i) sum += row[i];
        grad[bias_off_[si] + c] += sum;
      }
      if (si == 0) break;
      gcol.resize(static_cast<std::size_t>(ck) * p);
      gemm<T>(true, false, ck, p, st.out_channels, params_.data() + weight_off_[si], g_pre.data(), gcol.data(), false);
      col2im(gcol, sh.in_c, n_, sh.in_h, sh.in_w, st, sh.conv_h, sh.conv_w, g_out);
    }
  }

 private:
  void load(std::span<const FingerprintRecord> chunk) {
    const int c_in = spec_.in_channels;
    const std::size_t plane = static_cast<std::size_t>(spec_.in_height) * spec_.in_width;
    std::vector<T>& x = input_;
    x.resize(static_cast<std::size_t>(c_in) * chunk.size() * plane);
    for (std::size_t s = 0; s < chunk.size(); ++s) {
      const auto px = chunk[s].image->pixels();
      for (int c = 0; c < c_in; ++c) {
        const double mean = stats_.mean[static_cast<std::size_t>(c)];
        const double inv = 1.0 / stats_.stddev[static_cast<std::size_t>(c)];
        T* dst = x.data() + (static_cast<std::size_t>(c) * chunk.size() + s) * plane;
        const float* src = px.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = T(static_cast<decltype(primal(T{}))>((src[i] - mean) * inv));
      }
    }
  }

  void pool(StageBuffers<T>& b, int channels, const ModelSpec::StageShape& sh) {
    const std::size_t out_size = static_cast<std::size_t>(channels) * n_ * sh.out_h * sh.out_w;
    b.out.resize(out_size);
    b.argmax.resize(out_size);
    std::size_t o = 0;
    for (int c = 0; c < channels; ++c) {
      for (int s = 0; s < n_; ++s) {
        const std::size_t base = (static_cast<std::size_t>(c) * n_ + s) * sh.conv_h * sh.conv_w;
        for (int y = 0; y < sh.out_h; ++y) {
          for (int x = 0; x < sh.out_w; ++x, ++o) {
            std::size_t best = base + static_cast<std::size_t>(2 * y) * sh.conv_w + 2 * x;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t idx = base + static_cast<std::size_t>(2 * y + dy) * sh.conv_w + 2 * x + dx;
                if (primal(b.act[idx]) > primal(b.act[best])) best = idx;
              }
            }
            b.out[o] = b.act[best];
            b.argmax[o] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
  }

  const ModelSpec& spec_;
  const std::vector<ModelSpec::StageShape>& shapes_;
  const std::vector<T>& params_;
  const ChannelStats& stats_;
  std::vector<std::size_t> weight_off_, bias_off_;
  std::size_t fc_w_off_ = 0, fc_b_off_ = 0;
  int features_ = 0;
  int n_ = 0;
  std::vector<StageBuffers<T>> bufs_;
  std::vector<T> feat_, input_, gfeat_, g_out_, g_pre_, gcol_;
};

template <class T>
std::vector<T> to_scalars(const ParamSet& params, const ParamSet* direction) {
  std::vector<T> out(params.size());
  const auto v = params.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if constexpr (std::is_floating_point_v<T>) {
      out[i] = static_cast<T>(v[i]);
    } else {
      using R = decltype(primal(T{}));
      out[i] = T(static_cast<R>(v[i]), direction ? static_cast<R>(direction->values()[i]) : R(0));
    }
  }
  return out;
}

struct EvalResult {
  double loss = 0.0;
  std::vector<double> grad;     // primal gradient, flat
  std::vector<double> tangent;  // gradient tangent (Hessian-vector product)
  std::vector<Point2> pred;
};

/// Evaluates loss (and optionally gradient) over the batch in fixed chunks,
/// reducing partial sums in chunk order.
template <class T>
EvalResult evaluate(const ModelSpec& spec, const std::vector<ModelSpec::StageShape>& shapes,
                    const ChannelStats& stats, const ParamSet& params, const ParamSet* direction,
                    std::span<const FingerprintRecord> batch, std::size_t chunk, bool want_loss,
                    bool want_grad) {
  const std::vector<T> scalars = to_scalars<T>(params, direction);
  const std::size_t n = batch.size();
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<std::vector<T>> partial_grad(want_grad ? n_chunks : 0);
  std::vector<T> partial_loss(n_chunks, T(0));
  std::vector<Point2> pred(n);
  const double scale = 2.0 / static_cast<double>(n);

#pragma omp parallel if (n_chunks > 1)
  {
  Network<T> net(spec, shapes, params.layout(), scalars, stats);
  std::vector<T> p, gpred;
#pragma omp for schedule(static)
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    const std::size_t begin = ci * chunk;
    const std::size_t count = std::min(chunk, n - begin);
    const auto part = batch.subspan(begin, count);
    net.forward(part, p);
    gpred.resize(p.size());
    T sum = T(0);
    for (std::size_t s = 0; s < count; ++s) {
      const T ex = p[s] - T(static_cast<decltype(primal(T{}))>(part[s].label().x));
      const T ey = p[count + s] - T(static_cast<decltype(primal(T{}))>(part[s].label().y));
      sum += ex * ex + ey * ey;
      gpred[s] = ex * static_cast<decltype(primal(T{}))>(scale);
      gpred[count + s] = ey * static_cast<decltype(primal(T{}))>(scale);
      pred[begin + s] = {static_cast<double>(primal(p[s])), static_cast<double>(primal(p[count + s]))};
    }
    partial_loss[ci] = sum;
    if (want_grad) {
      partial_grad[ci].assign(net.num_params(), T(0));
      net.backward(gpred, partial_grad[ci]);
    }
  }
  }

  EvalResult r;
  r.pred = std::move(pred);
  if (want_loss) {
    double total = 0.0;
    for (const auto& l : partial_loss) total += static_cast<double>(primal(l));
    r.loss = total / static_cast<double>(n);
  }
  if (want_grad) {
    r.grad.assign(params.size(), 0.0);
    r.tangent.assign(params.size(), 0.0);
    for (const auto& g : partial_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        r.grad[i] += static_cast<double>(primal(g[i]));
        r.tangent[i] += static_cast<double>(tangent(g[i]));
      }
    }
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvRegressor
// ---------------------------------------------------------------------------

ConvRegressor::ConvRegressor(ModelSpec spec, Precision precision, ChannelStats stats)
    : spec_(std::move(spec)), precision_(precision), stats_(std::move(stats)) {
  const auto errors = spec_.validate();
  if (!errors.empty()) throw ShapeError("ConvRegressor: " + errors.front());
  shapes_ = spec_.shape_chain();
  layout_ = ParamSet::zeros(spec_.param_shapes());
  if (stats_.mean.empty()) stats_ = ChannelStats::identity(static_cast<std::size_t>(spec_.in_channels));
  if (stats_.mean.size() != static_cast<std::size_t>(spec_.in_channels) ||
      stats_.stddev.size() != static_cast<std::size_t>(spec_.in_channels))
    throw ShapeError("ConvRegressor: normalization statistics do not match the input channels");
}

ParamSet ConvRegressor::init_params(std::uint64_t seed) const { return csiloc::init_params(spec_, seed); }

void ConvRegressor::check(const ParamSet& params, std::span<const FingerprintRecord> batch) const {
  if (params.size() == 0 || !(params.layout() == layout_.layout()))
    throw ShapeError("ConvRegressor: parameter layout does not match the model spec");
  for (const auto& r : batch) {
    if (!r.image) throw std::invalid_argument("ConvRegressor: record without image");
    if (r.image->channels() != static_cast<std::size_t>(spec_.in_channels) ||
        r.image->height() != static_cast<std::size_t>(spec_.in_height) ||
        r.image->width() != static_cast<std::size_t>(spec_.in_width))
      throw ShapeError("ConvRegressor: input image shape does not match the model spec");
  }
}

std::vector<Point2> ConvRegressor::predict(const ParamSet& params,
                                           std::span<const FingerprintRecord> batch) const {
  check(params, batch);
  if (batch.empty()) return {};
  return precision_ == Precision::f32
             ? evaluate<float>(spec_, shapes_, stats_, params, nullptr, batch, chunk_, false, false).pred
             : evaluate<double>(spec_, shapes_, stats_, params, nullptr, batch, chunk_, false, false).pred;
}

double ConvRegressor::loss_and_grad(const ParamSet& params, std::span<const FingerprintRecord> batch,
                                    ParamSet* grad) const {
  check(params, batch);
  if (batch.empty()) throw std::invalid_argument("ConvRegressor: empty batch");
  const bool want = grad != nullptr;
  EvalResult r = precision_ == Precision::f32
                     ? evaluate<float>(spec_, shapes_, stats_, params, nullptr, batch, chunk_, true, want)
                     : evaluate<double>(spec_, shapes_, stats_, params, nullptr, batch, chunk_, true, want);
  if (grad) {
    *grad = ParamSet::zeros_like(params);
    std::copy(r.grad.begin(), r.grad.end(), grad->values().begin());
  }
  return r.loss;
}

ParamSet ConvRegressor::hvp(const ParamSet& params, std::span<const FingerprintRecord> batch,
                            const ParamSet& direction) const {
  check(params, batch);
  if (batch.empty()) throw std::invalid_argument("ConvRegressor: empty batch");
  if (!params.same_layout(direction)) throw ShapeError("ConvRegressor::hvp: direction layout differs");
  EvalResult r =
      precision_ == Precision::f32
          ? evaluate<Dual<float>>(spec_, shapes_, stats_, params, &direction, batch, chunk_, false, true)
          : evaluate<Dual<double>>(spec_, shapes_, stats_, params, &direction, batch, chunk_, false, true);
  ParamSet out = ParamSet::zeros_like(params);
  std::copy(r.tangent.begin(), r.tangent.end(), out.values().begin());
  return out;
}

Eigen::MatrixXd ConvRegressor::embed(const ParamSet& params, std::span<const FingerprintRecord> batch) const {
  check(params, batch);
  const int width = spec_.penultimate_width();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(batch.size()), width);
  for (std::size_t begin = 0; begin < batch.size(); begin += chunk_) {
    const std::size_t count = std::min(chunk_, batch.size() - begin);
    const auto part = batch.subspan(begin, count);
    const auto fill = [&](const auto& net) {
      const auto& feat = net.features_matrix();
      for (std::size_t s = 0; s < count; ++s) {
        for (int f = 0; f < width; ++f) {
          out(static_cast<Eigen::Index>(begin + s), f) = static_cast<double>(feat[static_cast<std::size_t>(f) * count + s]);
        }
      }
    };
    if (precision_ == Precision::f32) {
      const auto scalars = to_scalars<float>(params, nullptr);
      Network<float> net(spec_, shapes_, params.layout(), scalars, stats_);
      std::vector<float> p;
      net.forward(part, p);
      fill(net);
    } else {
      const auto scalars = to_scalars<double>(params, nullptr);
      Network<double> net(spec_, shapes_, params.layout(), scalars, stats_);
      std::vector<double> p;
      net.forward(part, p);
      fill(net);
    }
  }
  return out;
}

}  // namespace csiloc
