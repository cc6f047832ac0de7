// SPDX-License-Identifier: Apache-2.0

#include "detrack/noise_process.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace detrack {

NoiseSchedule::NoiseSchedule(int t_max, double beta_start, double beta_end) {
  if (t_max < 1) throw std::invalid_argument("noise schedule: t_max must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument(
        "noise schedule: require 0 < beta_start <= beta_end < 1");
  t_max_ = t_max;
  beta_.assign(t_max + 1, 0.0);
  alpha_bar_.assign(t_max + 1, 1.0);
  for (int t = 1; t <= t_max; ++t) {
    const double frac = t_max == 1 ? 0.0 : double(t - 1) / double(t_max - 1);
    beta_[t] = beta_start + frac * (beta_end - beta_start);
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
  }
}

NoiseSchedule make_schedule(int t_max, double beta_start, double beta_end) {
  return NoiseSchedule(t_max, beta_start, beta_end);
}

NoisySample add_noise(const Box4& x0, int t, const NoiseSchedule& schedule,
                      const NormalSource& normal) {
  if (t < 0 || t > schedule.t_max())
    throw std::out_of_range("add_noise: timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(schedule.t_max()) +
                            "]");
  NoisySample s;
  s.t = t;
  if (t == 0) {
    s.x_noisy = x0;
    return s;
  }
  const double keep = std::sqrt(schedule.alpha_bar(t));
  const double spread = std::sqrt(1.0 - schedule.alpha_bar(t));
  for (int k = 0; k < 4; ++k) {
    if (!std::isfinite(x0[k])) throw std::invalid_argument("add_noise: non-finite box");
    s.eps[k] = normal();
    s.x_noisy[k] = keep * x0[k] + s.eps[k] * spread;
  }
  return s;
}

NoisySample add_noise(const Box4& x0, int t, const NoiseSchedule& schedule,
                      std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  GaussianStream normal(rng);
  return add_noise(x0, t, schedule, NormalSource(std::ref(normal)));
}

int sample_timestep(const NoiseSchedule& schedule, std::mt19937_64& rng) {
  return static_cast<int>(uniform_int(rng, 1, schedule.t_max()));
}

int sample_timestep(const NoiseSchedule& schedule, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  return sample_timestep(schedule, rng);
}

double GaussianStream::operator()() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform01(*rng_);
  } while (u1 <= 0.0);
  const double u2 = uniform01(*rng_);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const std::uint64_t span = std::uint64_t(hi - lo) + 1;
  if (span == 0) return std::int64_t(rng());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t v = 0;
  do {
    v = rng();
  } while (v >= limit);
  return lo + std::int64_t(v % span);
}

}  // namespace detrack
