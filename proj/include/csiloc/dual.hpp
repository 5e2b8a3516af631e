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

#ifndef CSILOC_DUAL_HPP
#define CSILOC_DUAL_HPP

#include <cmath>

namespace csiloc {

/// Forward-mode dual number v + d*eps with eps^2 = 0.
///
/// Running the hand-written backward pass on Dual scalars whose tangent is a
/// parameter direction yields the Hessian-vector product in the tangent of
/// the gradient (forward-over-reverse).
template <class R>
struct Dual {
  R v{};
  R d{};

  constexpr Dual() = default;
  constexpr Dual(R value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(R value, R tangent) : v(value), d(tangent) {}

  constexpr Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
  constexpr Dual operator-() const { return {-v, -d}; }
};

template <class R>
constexpr Dual<R> operator+(Dual<R> a, const Dual<R>& b) { return a += b; }
template <class R>
constexpr Dual<R> operator-(Dual<R> a, const Dual<R>& b) { return a -= b; }
template <class R>
constexpr Dual<R> operator*(Dual<R> a, const Dual<R>& b) { return a *= b; }
template <class R>
constexpr Dual<R> operator*(R s, const Dual<R>& a) { return {s * a.v, s * a.d}; }
template <class R>
constexpr Dual<R> operator*(const Dual<R>& a, R s) { return {s * a.v, s * a.d}; }
template <class R>
constexpr Dual<R> operator/(const Dual<R>& a, R s) { return {a.v / s, a.d / s}; }

template <class R>
Dual<R> tanh(const Dual<R>& a) {
  const R t = std::tanh(a.v);
  return {t, (R(1) - t * t) * a.d};
}

inline float primal(float x) { return x; }
inline double primal(double x) { return x; }
template <class R>
R primal(const Dual<R>& x) { return x.v; }

inline float tangent(float) { return 0.0f; }
inline double tangent(double) { return 0.0; }
template <class R>
R tangent(const Dual<R>& x) { return x.d; }

}  // namespace csiloc

#endif  // CSILOC_DUAL_HPP
