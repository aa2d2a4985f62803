#include "mtf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mtf {

PredictedScores PredictedScores::make(std::span<const double> values) {
  if (values.size() != kHeads) {
    throw std::invalid_argument("PredictedScores: expected " + std::to_string(kHeads) +
                                " scores, got " + std::to_string(values.size()));
  }
  PredictedScores p;
  std::copy(values.begin(), values.end(), p.scores.begin());
  p.validate();
  return p;
}

void PredictedScores::validate() const {
  for (double s : scores) {
    if (!std::isfinite(s) || s <= 0.0 || s > 1.0) {
      throw std::invalid_argument("PredictedScores: score outside (0, 1]: " + std::to_string(s));
    }
  }
}

FusionAction FusionAction::make(std::span<const double> values) {
  if (values.size() != kActionDim) {
    throw std::invalid_argument("FusionAction: expected " + std::to_string(kActionDim) +
                                " entries, got " + std::to_string(values.size()));
  }
  FusionAction action;
  std::copy(values.begin(), values.end(), action.a.begin());
  action.validate();
  return action;
}

void FusionAction::validate() const {
  for (double x : a) {
    if (!std::isfinite(x) || x < -1.0 || x > 1.0) {
      throw std::invalid_argument("FusionAction: entry outside [-1, 1]: " + std::to_string(x));
    }
  }
}

FusionParams denormalize_action(const FusionAction& action) {
  action.validate();
  FusionParams params;
  for (std::size_t i = 0; i < kHeads; ++i) {
    params.powers[i] = 1.0 + action.a[i];
    params.biases[i] = 0.5 * kMaxBias * (action.a[kHeads + i] + 1.0);
  }
  return params;
}

FusionAction normalize_params(const FusionParams& params) {
  FusionAction action;
  for (std::size_t i = 0; i < kHeads; ++i) {
    action.a[i] = params.powers[i] - 1.0;
    action.a[kHeads + i] = params.biases[i] / (0.5 * kMaxBias) - 1.0;
  }
  action.validate();
  return action;
}

double fuse_scores(const PredictedScores& predicted, const FusionParams& params) {
  double result = 1.0;
  for (std::size_t i = 0; i < kHeads; ++i) {
    const double score = predicted.scores[i];
    const double bias = params.biases[i];
    const double power = params.powers[i];
    if (!std::isfinite(score) || !std::isfinite(bias) || !std::isfinite(power)) {
      throw std::invalid_argument("fuse_scores: non-finite input");
    }
    result *= std::pow(std::max(score + bias, kBaseFloor), power);
  }
  return result;
}

StateLayout EnhancedState::layout() const {
  return {user_features.size(), item_features.size(), context.size()};
}

std::vector<double> EnhancedState::flatten() const {
  std::vector<double> out(layout().total());
  flatten_into(out);
  return out;
}

void EnhancedState::flatten_into(std::span<double> out) const {
  if (out.size() != layout().total()) {
    throw std::invalid_argument("EnhancedState::flatten_into: output width mismatch");
  }
  auto it = std::copy(user_features.begin(), user_features.end(), out.begin());
  it = std::copy(item_features.begin(), item_features.end(), it);
  it = std::copy(mtl_scores.scores.begin(), mtl_scores.scores.end(), it);
  std::copy(context.begin(), context.end(), it);
}

std::vector<std::size_t> rank_by_score(std::span<const double> final_scores,
                                       std::size_t list_length) {
  if (list_length == 0 || list_length > final_scores.size()) {
    throw std::invalid_argument("rank_by_score: list length " + std::to_string(list_length) +
                                " invalid for " + std::to_string(final_scores.size()) +
                                " candidates");
  }
  std::vector<std::size_t> order(final_scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(list_length),
                    order.end(), [&](std::size_t x, std::size_t y) {
                      if (final_scores[x] != final_scores[y]) return final_scores[x] > final_scores[y];
                      return x < y;
                    });
  order.resize(list_length);
  return order;
}

std::vector<std::size_t> rank_candidates(const RequestState& request,
                                         std::span<const FusionAction> actions,
                                         std::size_t list_length) {
  if (actions.size() != request.sub_states.size()) {
    throw std::invalid_argument("rank_candidates: one action per candidate required");
  }
  std::vector<double> scores(actions.size());
  for (std::size_t c = 0; c < actions.size(); ++c) {
    scores[c] = fuse_scores(request.sub_states[c].mtl_scores, denormalize_action(actions[c]));
  }
  return rank_by_score(scores, list_length);
}

}  // namespace mtf
