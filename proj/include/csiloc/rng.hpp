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

#ifndef CSILOC_RNG_HPP
#define CSILOC_RNG_HPP

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace csiloc {

/// Philox4x32-10 counter-based generator.
///
/// The 64-bit seed is the key. The 128-bit counter is split into a 64-bit
/// stream id (high half) and a 64-bit block index (low half). Substreams are
/// derived by folding integer labels into the stream id with a SplitMix64
/// finalizer:
///
///     child.stream = mix(mix(parent.stream ^ label_0) ^ label_1) ...
///
/// so a stream for (task, rp, sample) is `Rng(seed).substream({tag, task, rp, sample})`.
/// Draws from different substreams never overlap and do not depend on the
/// order in which substreams are created, which is what makes parallel
/// generation identical to sequential generation.
///
/// Satisfies UniformRandomBitGenerator (32-bit output).
class Rng {
 public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  Rng substream(std::initializer_list<std::uint64_t> labels) const noexcept;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal() noexcept;
  /// Uniform integer on [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  std::uint64_t seed() const noexcept { return key_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// SplitMix64 finalizer; exposed for deriving seeds from labels.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// In-place Fisher-Yates shuffle driven by `rng`.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// First `k` entries of a seeded permutation of [0, n) (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

}  // namespace csiloc

#endif  // CSILOC_RNG_HPP
