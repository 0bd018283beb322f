// core/rng.h

// Copyright 2026  vsrkit authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef VSRKIT_CORE_RNG_H_
#define VSRKIT_CORE_RNG_H_

#include <cstdint>
#include <random>
#include <string>

namespace vsr {

// Seeded random source with hand-rolled value transforms. mt19937_64 output
// is standardized, so avoiding std::*_distribution keeps every draw
// reproducible across standard library implementations.
class RngState {
 public:
  explicit RngState(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of entropy.
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n), rejection-sampled to remove modulo bias.
  int64_t UniformInt(int64_t n);

  bool Bernoulli(double p) { return Uniform() < p; }

  // Standard normal via Box-Muller; caches the second draw.
  double Normal();

  // Derive an independent child stream from this seed namespace and a label,
  // e.g. per clip id or per epoch.
  static uint64_t DeriveSeed(uint64_t seed, const std::string& label);
  static uint64_t DeriveSeed(uint64_t seed, uint64_t index);

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace vsr

#endif  // VSRKIT_CORE_RNG_H_
