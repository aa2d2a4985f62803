#pragma once

// Per-item and per-request rewards from observed user behaviors.

#include <array>
#include <cstdint>
#include <span>

namespace mtf {

/// Watching strictly longer than this counts as a valid consumption.
inline constexpr double kValidWatchSeconds = 10.0;

struct BehaviorVector {
  double watch_time = 0.0;  // seconds
  std::uint8_t valid_consumption = 0;
  std::uint8_t like = 0;
  std::uint8_t share = 0;
  std::uint8_t collect = 0;

  /// Builds a vector whose valid_consumption flag follows from watch_time.
  static BehaviorVector from_watch(double watch_time, bool like, bool share, bool collect);
  void validate() const;
};

/// Order: watch_time (per second), valid consumption, like, share, collect.
struct BehaviorWeights {
  std::array<double, 5> w{0.02, 1.0, 0.5, 1.0, 0.5};

  void validate() const;
};

double item_reward(const BehaviorVector& v, const BehaviorWeights& w);
double request_reward(std::span<const double> item_rewards);
int consumption_label(const BehaviorVector& v);

}  // namespace mtf
