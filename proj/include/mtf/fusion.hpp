#pragma once

// State/action data model and the multiplicative score-fusion formula.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mtf {

inline constexpr std::size_t kHeads = 5;
inline constexpr std::size_t kActionDim = 2 * kHeads;
inline constexpr std::size_t kListLength = 5;

/// Smallest base allowed before exponentiation in fuse_scores.
inline constexpr double kBaseFloor = 1e-6;

/// Power range [0, 2] and bias range [0, kMaxBias] of the denormalized action.
inline constexpr double kMaxPower = 2.0;
inline constexpr double kMaxBias = 0.1;

/// Per-head MTL predictions: click, normalized watch, like, share, collect.
/// Every element lies in (0, 1].
struct PredictedScores {
  std::array<double, kHeads> scores{};

  static PredictedScores make(std::span<const double> values);
  void validate() const;
};

/// Normalized fusion action in [-1, 1]^10. The first five entries drive the
/// powers and the last five the biases.
struct FusionAction {
  std::array<double, kActionDim> a{};

  static FusionAction make(std::span<const double> values);
  static FusionAction midpoint() { return {}; }
  void validate() const;
};

struct FusionParams {
  std::array<double, kHeads> powers{};
  std::array<double, kHeads> biases{};
};

FusionParams denormalize_action(const FusionAction& action);
FusionAction normalize_params(const FusionParams& params);

/// prod_i (score_i + bias_i)^power_i, each base clamped below at kBaseFloor.
double fuse_scores(const PredictedScores& predicted, const FusionParams& params);

/// Fixed widths of the flattened enhanced state.
struct StateLayout {
  std::size_t user_dim = 0;
  std::size_t item_dim = 0;
  std::size_t context_dim = 0;

  std::size_t mtl_offset() const { return user_dim + item_dim; }
  std::size_t context_offset() const { return user_dim + item_dim + kHeads; }
  std::size_t total() const { return user_dim + item_dim + kHeads + context_dim; }
  bool operator==(const StateLayout&) const = default;
};

/// One user-item sub-state. Flattened order is user, item, mtl scores, context.
struct EnhancedState {
  std::vector<double> user_features;
  std::vector<double> item_features;
  PredictedScores mtl_scores;
  std::vector<double> context;

  StateLayout layout() const;
  std::vector<double> flatten() const;
  void flatten_into(std::span<double> out) const;
};

struct RequestState {
  std::vector<EnhancedState> sub_states;
  std::uint64_t user_id = 0;
  std::uint32_t request_index = 0;
};

/// Indices of the `list_length` candidates with the highest final score, in
/// descending score order. Ties resolve to the lower index.
std::vector<std::size_t> rank_by_score(std::span<const double> final_scores,
                                       std::size_t list_length);

std::vector<std::size_t> rank_candidates(const RequestState& request,
                                         std::span<const FusionAction> actions,
                                         std::size_t list_length);

}  // namespace mtf
