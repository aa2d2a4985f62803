#pragma once

// Synthetic session-based recommender. Users and items carry hidden latent
// vectors; a surrogate MTL model reports noisy per-head scores whose
// reliability depends on the item category, so the best fusion weights differ
// per item.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mtf/fusion.hpp"
#include "mtf/reward.hpp"
#include "mtf/rng.hpp"
#include "mtf/transition.hpp"

namespace mtf {

inline constexpr std::size_t kCategories = 3;

struct WorldConfig {
  std::uint32_t n_users = 200;
  std::uint32_t n_items = 600;
  std::uint32_t latent_dim = 4;
  double profile_noise = 0.3;
  double item_proxy_noise = 0.5;
  double affinity_scale = 2.0;
  double popularity_weight = 0.5;
  double affinity_offset = 0.0;

  // Logit offset per MTL head and logit noise std per (category, head).
  std::array<double, kHeads> head_offsets{0.0, 0.0, -1.5, -2.5, -2.0};
  std::array<std::array<double, kHeads>, kCategories> head_noise{{
      {0.05, 2.5, 1.5, 1.5, 1.5},
      {2.5, 0.05, 1.5, 1.5, 1.5},
      {2.0, 2.0, 0.05, 0.05, 0.05},
  }};

  double patience_min = 0.6;
  double patience_max = 1.0;

  double watch_max = 40.0;
  double watch_slope = 1.5;
  double watch_shift = -0.5;
  double watch_shape = 2.0;
  std::array<double, 3> interaction_offsets{-1.5, -2.5, -2.0};  // like, share, collect

  double continue_bias = -1.0;
  double continue_slope = 0.5;
  std::uint32_t max_requests = 10;
  std::uint32_t n_candidates = 50;
  std::uint32_t list_length = static_cast<std::uint32_t>(kListLength);

  BehaviorWeights reward_weights;

  void validate() const;
};

struct SimUser {
  std::uint64_t id = 0;
  std::vector<double> latent;
  std::vector<double> visible_profile;
  double patience = 1.0;
};

struct SimItem {
  std::uint64_t id = 0;
  std::uint32_t category = 0;
  std::vector<double> embedding;
  std::vector<double> visible_features;
  double popularity = 0.0;
};

struct World {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<SimUser> users;
  std::vector<SimItem> items;

  /// user: profile + flush num + 2 history aggregates; item: one-hot
  /// category + popularity + latent proxies; context: position, round.
  StateLayout layout() const;

  std::vector<std::uint8_t> serialize() const;
  static World deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static World load(const std::filesystem::path& path);

  bool operator==(const World&) const;
};

World gen_world(std::uint64_t seed, std::uint32_t n_users, std::uint32_t n_items,
                const WorldConfig& config = {});

double true_affinity(const World& world, const SimUser& user, const SimItem& item);

/// Noise-free head logit; the surrogate adds category noise on top.
double head_signal(const World& world, const SimUser& user, const SimItem& item, std::size_t head);

/// Deterministic per (world seed, user, item, head).
PredictedScores mtl_surrogate(const World& world, const SimUser& user, const SimItem& item);

BehaviorVector sample_behaviors(const World& world, const SimUser& user, const SimItem& item,
                                Rng& rng);

/// Expected item reward of one impression, in closed form.
double expected_item_reward(const World& world, const SimUser& user, const SimItem& item);

double continuation_probability(const World& world, const SimUser& user, double request_reward,
                                std::uint32_t requests_served);

/// One continuation draw. `requests_served` counts the request just served.
bool step_session(const World& world, const SimUser& user, double request_reward,
                  std::uint32_t requests_served, Rng& rng);

/// Session-level state a policy sees when building enhanced states.
struct SessionHistory {
  std::uint32_t requests_served = 0;
  double reward_sum = 0.0;
  std::uint32_t items_seen = 0;
  std::uint32_t valid_consumptions = 0;
};

EnhancedState build_state(const World& world, const SimUser& user, const SimItem& item,
                          const SessionHistory& history, std::uint32_t round_id);

/// Produces one action per candidate plus the baseline action it was derived
/// from (identical for deterministic policies).
class FusionPolicy {
 public:
  virtual ~FusionPolicy() = default;
  virtual void act_request(const RequestState& request, std::span<FusionAction> actions,
                           std::span<FusionAction> baselines, Rng& rng) const = 0;
};

class ConstantPolicy final : public FusionPolicy {
 public:
  explicit ConstantPolicy(FusionAction action) : action_(action) {}
  void act_request(const RequestState& request, std::span<FusionAction> actions,
                   std::span<FusionAction> baselines, Rng& rng) const override;

 private:
  FusionAction action_;
};

struct SessionTrace {
  std::vector<Transition> transitions;
  std::uint32_t session_length = 0;
  double total_reward = 0.0;
  std::uint32_t valid_consumptions = 0;
};

/// Candidate ids for one request; identical for every policy under one seed.
std::vector<std::uint32_t> sample_candidates(const World& world, std::uint64_t session_seed,
                                             std::uint32_t request_index);

SessionTrace rollout_session(const FusionPolicy& policy, const World& world, const SimUser& user,
                             std::uint64_t session_seed, std::uint64_t session_id = 0,
                             std::uint32_t round_id = 0);

}  // namespace mtf
