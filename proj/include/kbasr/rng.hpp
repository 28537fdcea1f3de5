// Copyright 2026 The kbasr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KBASR_RNG_HPP_
#define KBASR_RNG_HPP_

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace kbasr {

// Self-contained xoshiro256** generator. The standard <random> distributions
// are implementation-defined, which would break checkpointed trajectories;
// every draw here is fully specified so serialized state (four words) is
// enough to resume a run bit-exactly.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller. Draws two uniforms per call and keeps no
  // cached spare, so the state is exactly the four generator words.
  double normal();

  // Uniform integer in [0, n). n must be positive.
  int below(int n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = below(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<std::uint64_t, 4> state_{};
};

// FNV-1a, used to derive stable per-word seeds.
std::uint64_t hash64(std::string_view s);

}  // namespace kbasr

#endif  // KBASR_RNG_HPP_
