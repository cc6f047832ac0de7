// SPDX-License-Identifier: Apache-2.0
//
// Forward box noising: x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace detrack {

using Box4 = std::array<double, 4>;

/// Linear variance schedule with precomputed cumulative products.
/// Index 0 is the zero-noise passthrough (alpha_bar = 1); steps run 1..t_max.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(int t_max, double beta_start, double beta_end);

  int t_max() const { return t_max_; }
  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return 1.0 - beta_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }

 private:
  int t_max_ = 0;
  std::vector<double> beta_;       // beta_[0] == 0
  std::vector<double> alpha_bar_;  // alpha_bar_[0] == 1
};

NoiseSchedule make_schedule(int t_max, double beta_start, double beta_end);

struct NoisySample {
  Box4 x_noisy{};
  int t = 0;
  Box4 eps{};
};

/// Source of standard-normal draws. Injectable so tests can force eps.
using NormalSource = std::function<double()>;

NoisySample add_noise(const Box4& x0, int t, const NoiseSchedule& schedule,
                      const NormalSource& normal);
NoisySample add_noise(const Box4& x0, int t, const NoiseSchedule& schedule,
                      std::uint64_t rng_seed);

/// Uniform timestep in [1, t_max].
int sample_timestep(const NoiseSchedule& schedule, std::mt19937_64& rng);
int sample_timestep(const NoiseSchedule& schedule, std::uint64_t rng_seed);

/// Standard normal draws from a 64-bit Mersenne twister via Box-Muller, so the
/// stream is identical across standard library implementations.
class GaussianStream {
 public:
  explicit GaussianStream(std::mt19937_64& rng) : rng_(&rng) {}
  double operator()();

 private:
  std::mt19937_64* rng_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);
/// Uniform integer in [lo, hi] by rejection; stdlib-independent.
std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi);

}  // namespace detrack
