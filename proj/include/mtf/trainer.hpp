#pragma once

// Transition storage, the offline actor/critic loop, and progressive
// training: alternate bounded exploration around the newest policy with
// offline training on the data gathered so far.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtf/env.hpp"
#include "mtf/eval.hpp"
#include "mtf/policy.hpp"
#include "mtf/transition.hpp"

namespace mtf {

/// Append-only transition store. Iteration order is insertion order.
class ReplayDataset {
 public:
  void append(Transition t);
  void append(std::span<const Transition> ts);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Transition>& records() const { return records_; }
  const Transition& operator[](std::size_t i) const { return records_[i]; }

  std::uint32_t round_count() const;
  std::vector<const Transition*> round(std::uint32_t round_id) const;
  /// Records with round_id <= last_round.
  std::vector<const Transition*> up_to(std::uint32_t last_round) const;

  /// Length-prefixed records behind a header of (state_dim, action_dim,
  /// list_length, round_count, record_count), CRC-32 trailer.
  std::vector<std::uint8_t> serialize() const;
  static ReplayDataset deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static ReplayDataset load(const std::filesystem::path& path);

 private:
  std::vector<Transition> records_;
};

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t steps = 20000;
  std::size_t critic_count = 10;
  PenaltyConfig penalty;
  CriticPenaltyMode critic_penalty_mode = CriticPenaltyMode::kTargetSubtract;
  ExplorationBounds bounds = ExplorationBounds::symmetric(0.15);
  NetShapes shapes;
  AdamConfig actor_adam;
  AdamConfig critic_adam;
  SoftUpdateSchedule soft_update;
  std::uint64_t seed = 0;
  bool user_state_only = false;
  /// Train on every round so far (true) or on the newest round only.
  bool union_rounds = true;
  /// Continue from the previous round's networks (true) or start fresh.
  bool warm_start = true;
  std::size_t metrics_every = 100;

  void validate() const;
};

/// Actor plus critic ensemble: everything a round trains.
struct Learner {
  ActorPolicy actor;
  CriticEnsemble critics;

  static Learner fresh(StateLayout layout, const TrainConfig& config);
};

struct StepMetrics {
  std::size_t step = 0;
  std::vector<double> critic_losses;
  double actor_loss = 0.0;
  double mean_q = 0.0;
  double boundary_penalty = 0.0;
  double std_term = 0.0;
  double critic_penalty = 0.0;

  std::string to_line(std::uint32_t round_id) const;
};

struct TrainResult {
  Learner learner;
  std::vector<StepMetrics> metrics;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CollectStats {
  std::size_t sessions = 0;
  std::size_t requests = 0;
  double total_reward = 0.0;
};

/// Rolls out `n_sessions` sessions with exploration around `baseline` and
/// returns their transitions tagged with `round_id`.
std::vector<Transition> collect_round(const World& world, const FusionPolicy& baseline,
                                      const ExplorationBounds& bounds, std::size_t n_sessions,
                                      std::uint64_t seed, std::uint32_t round_id,
                                      CollectStats* stats = nullptr);

/// Trains on rounds <= `round_id` (or == when union_rounds is off). When
/// `start` is given, training continues from it.
TrainResult train_round(const ReplayDataset& dataset, StateLayout layout, const TrainConfig& config,
                        std::uint32_t round_id, std::optional<Learner> start = std::nullopt);

struct PtmConfig {
  std::uint32_t rounds = 5;
  std::size_t sessions_per_round = 2000;
  std::size_t eval_sessions = 500;
  std::size_t heldout_sessions = 300;
  TrainConfig train;
};

struct EvalReport {
  std::uint32_t round_id = 0;
  double mean_session_reward = 0.0;
  double session_reward_stderr = 0.0;
  double mean_valid_consumptions = 0.0;
  double mean_session_length = 0.0;
  std::vector<double> session_rewards;
  GaucReport gauc;

  std::string to_text() const;
};

struct RoundArtifact {
  std::uint32_t round_id = 0;
  std::vector<std::uint8_t> policy_checkpoint;
  EvalReport report;
  std::vector<StepMetrics> metrics;
  CollectStats collect;
};

/// Mean session reward of `policy` over `n_sessions` sessions whose users and
/// seeds depend only on `seed`, plus weighted GAUC on `heldout`.
EvalReport evaluate_policy(const World& world, const ActorPolicy& actor,
                           std::span<const Transition> heldout, std::size_t n_sessions,
                           std::uint64_t seed, std::uint32_t round_id);

/// Exploration data around the midpoint policy used as the shared test set.
std::vector<Transition> collect_heldout(const World& world, const TrainConfig& config,
                                        std::size_t n_sessions, std::uint64_t seed);

/// Evaluation seed ptm_run uses for a run seed; shared with standalone evaluation.
std::uint64_t ptm_eval_seed(std::uint64_t run_seed);
/// Exploration and training seeds ptm_run derives from its run seed.
std::uint64_t ptm_collect_seed(std::uint64_t run_seed);
std::uint64_t ptm_train_seed(std::uint64_t run_seed);

using RoundCallback = std::function<void(const RoundArtifact&)>;

std::vector<RoundArtifact> ptm_run(const World& world, const PtmConfig& config, std::uint64_t seed,
                                   const RoundCallback& on_round = {});

/// Policy checkpoint: header (round, bounds, penalties, mode), actor, critics.
struct PolicyCheckpoint {
  std::uint32_t round_id = 0;
  ExplorationBounds bounds;
  PenaltyConfig penalty;
  CriticPenaltyMode critic_penalty_mode = CriticPenaltyMode::kTargetSubtract;
  std::optional<Learner> learner;

  std::vector<std::uint8_t> serialize() const;
  static PolicyCheckpoint deserialize(std::span<const std::uint8_t> bytes);
};

}  // namespace mtf
