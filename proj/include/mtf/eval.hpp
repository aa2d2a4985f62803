#pragma once

// Reward-weighted group AUC and simulator-based policy comparison.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtf/env.hpp"
#include "mtf/transition.hpp"

namespace mtf {

class ActorPolicy;

struct EvalSample {
  std::uint64_t group = 0;
  int label = 0;
  double weight = 1.0;  // item reward + 1
  double raw_score = 0.0;
  double score = 0.0;   // normalized to [0, 1] over the whole test set
};

/// Min-max normalization over the full set; all-equal input maps to 0.5.
std::vector<double> normalize_scores(std::span<const double> raw);

/// Pairwise AUC with weight w_i * w_j per (positive, negative) pair and half
/// credit for ties. nullopt when the group lacks either label.
std::optional<double> weighted_group_auc(std::span<const EvalSample> group);

struct GaucReport {
  double overall = 0.0;
  std::vector<std::uint64_t> group_ids;
  std::vector<double> group_aucs;
  std::vector<double> group_weights;
  std::size_t sample_count = 0;
  std::size_t excluded_groups = 0;

  std::string to_text() const;
};

/// Groups are ordered by id; group weight is the sum of its sample weights.
/// Throws when no group has both labels.
GaucReport weighted_gauc(std::span<const EvalSample> samples);

/// One sample per logged impression, scored by `actor` and normalized.
std::vector<EvalSample> build_eval_samples(std::span<const Transition> data, const ActorPolicy& actor);

struct ComparisonReport {
  std::size_t batches = 0;
  std::size_t sessions_per_batch = 0;
  double mean_reward_a = 0.0;
  double mean_reward_b = 0.0;
  double mean_valid_a = 0.0;
  double mean_valid_b = 0.0;
  double lift = 0.0;           // mean_reward_a - mean_reward_b
  double relative_lift = 0.0;  // lift / mean_reward_b
  double t_statistic = 0.0;
  double p_value = 1.0;        // two-sided paired t-test over batch means
  std::vector<double> batch_means_a;
  std::vector<double> batch_means_b;

  std::string to_text() const;
};

/// Two-sided paired t-test on differences; returns {t, p}.
std::pair<double, double> paired_t_test(std::span<const double> a, std::span<const double> b);

/// Matched-seed comparison: batch b, session k uses the same user and
/// session seed for both policies.
ComparisonReport compare_policies(const World& world, const FusionPolicy& a, const FusionPolicy& b,
                                  std::size_t batches, std::size_t sessions_per_batch,
                                  std::uint64_t seed);

/// The same training setup with the actor restricted to user and context
/// features: item features and MTL scores are masked and one action is
/// broadcast to every candidate of a request.
struct TrainConfig;
TrainConfig user_state_only_ablation(TrainConfig config);

}  // namespace mtf
