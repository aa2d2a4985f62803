#include "mtf/reward.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mtf {

namespace {

void check_flag(std::uint8_t flag, const char* name) {
  if (flag > 1) throw std::invalid_argument(std::string("BehaviorVector: ") + name + " must be 0 or 1");
}

}  // namespace

BehaviorVector BehaviorVector::from_watch(double watch_time, bool like, bool share, bool collect) {
  BehaviorVector v;
  v.watch_time = watch_time;
  v.valid_consumption = watch_time > kValidWatchSeconds ? 1 : 0;
  v.like = like;
  v.share = share;
  v.collect = collect;
  v.validate();
  return v;
}

void BehaviorVector::validate() const {
  if (!std::isfinite(watch_time) || watch_time < 0.0) {
    throw std::invalid_argument("BehaviorVector: negative or non-finite watch_time " +
                                std::to_string(watch_time));
  }
  check_flag(valid_consumption, "valid_consumption");
  check_flag(like, "like");
  check_flag(share, "share");
  check_flag(collect, "collect");
  if ((valid_consumption == 1) != (watch_time > kValidWatchSeconds)) {
    throw std::invalid_argument("BehaviorVector: valid_consumption disagrees with watch_time");
  }
}

void BehaviorWeights::validate() const {
  bool any_positive = false;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("BehaviorWeights: negative weight");
    any_positive = any_positive || x > 0.0;
  }
  if (!any_positive) throw std::invalid_argument("BehaviorWeights: all weights are zero");
}

double item_reward(const BehaviorVector& v, const BehaviorWeights& w) {
  if (!(v.watch_time >= 0.0)) throw std::invalid_argument("item_reward: negative watch_time");
  return w.w[0] * v.watch_time + w.w[1] * v.valid_consumption + w.w[2] * v.like +
         w.w[3] * v.share + w.w[4] * v.collect;
}

double request_reward(std::span<const double> item_rewards) {
  if (item_rewards.empty()) throw std::invalid_argument("request_reward: empty recommendation list");
  double total = 0.0;
  for (double r : item_rewards) total += r;
  return total;
}

int consumption_label(const BehaviorVector& v) {
  return v.watch_time > kValidWatchSeconds ? 1 : 0;
}

}  // namespace mtf
