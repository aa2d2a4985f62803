#pragma once

// Enhanced-state actor, critic ensemble, bounded exploration and the actor /
// critic objectives.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mtf/env.hpp"
#include "mtf/fusion.hpp"
#include "mtf/nets.hpp"
#include "mtf/transition.hpp"

namespace mtf {

/// Per-dimension perturbation interval around the baseline action, in
/// normalized action units.
struct ExplorationBounds {
  std::array<double, kActionDim> lower{};
  std::array<double, kActionDim> upper{};

  static ExplorationBounds symmetric(double half_width);
  /// lower <= upper per dimension and both inside [-2, 2]. Zero-width
  /// dimensions are allowed and disable exploration on that dimension.
  void validate() const;
};

struct PenaltyConfig {
  double eta = 1.0;     // boundary penalty weight in the actor objective
  double lambda = 0.25; // ensemble-std weight in the actor objective
  double delta = 0.5;   // boundary penalty weight in the critic target
  double beta = 1.0;    // penalty sharpness
  double gamma = 0.9;   // discount

  void validate() const;
};

enum class CriticPenaltyMode : std::uint8_t {
  /// Subtract delta * d(...) from every bootstrapped next-state value.
  kTargetSubtract = 0,
  /// Add delta * sum_j d(...) outside the squared TD error, as printed.
  /// Constant in the critic parameters; reported as a diagnostic.
  kLiteral = 1,
};

struct NetShapes {
  std::vector<std::size_t> actor_hidden{64, 32};
  std::vector<std::size_t> critic_hidden{64, 32};
};

/// Deterministic actor mu and its target mu'. In user-state-only mode the
/// item features and MTL scores are zeroed before the network sees them.
class ActorPolicy {
 public:
  ActorPolicy(StateLayout layout, const NetShapes& shapes, std::uint64_t seed,
              SoftUpdateSchedule schedule = {}, AdamConfig adam = {}, bool user_state_only = false);

  /// Random hidden layers with a zeroed output layer: emits the midpoint
  /// action for every state while remaining trainable.
  static ActorPolicy midpoint(StateLayout layout, const NetShapes& shapes, std::uint64_t seed,
                              SoftUpdateSchedule schedule = {}, AdamConfig adam = {},
                              bool user_state_only = false);

  const StateLayout& layout() const { return layout_; }
  bool user_state_only() const { return user_state_only_; }

  /// Applies the user-state-only mask (a copy when masking is active).
  Eigen::MatrixXd network_input(const Eigen::MatrixXd& states) const;

  FusionAction act(std::span<const double> state) const;
  /// Columns are states; returns 10 x batch actions from the online network.
  Eigen::MatrixXd act_batch(const Eigen::MatrixXd& states) const;
  Eigen::MatrixXd target_act_batch(const Eigen::MatrixXd& states) const;

  TargetPair nets;
  AdamState adam;

 private:
  ActorPolicy(StateLayout layout, TargetPair pair, AdamState adam_state, bool user_state_only);
  friend ActorPolicy read_actor(ByteReader&);

  StateLayout layout_;
  bool user_state_only_ = false;
};

struct CriticMember {
  TargetPair nets;
  AdamState adam;
};

/// m independent Q(s, a) networks over the concatenated (state, action).
class CriticEnsemble {
 public:
  CriticEnsemble(std::size_t count, std::size_t state_dim, const NetShapes& shapes,
                 std::uint64_t seed, SoftUpdateSchedule schedule = {}, AdamConfig adam = {});
  explicit CriticEnsemble(std::vector<CriticMember> members);

  std::size_t size() const { return members_.size(); }
  CriticMember& operator[](std::size_t i) { return members_[i]; }
  const CriticMember& operator[](std::size_t i) const { return members_[i]; }
  std::vector<CriticMember>& members() { return members_; }
  const std::vector<CriticMember>& members() const { return members_; }

 private:
  std::vector<CriticMember> members_;
};

FusionAction explore_act(const FusionAction& baseline, const ExplorationBounds& bounds, Rng& rng,
                         std::array<double, kActionDim>* perturbation = nullptr);
FusionAction explore_act(const ActorPolicy& baseline_policy, std::span<const double> state,
                         const ExplorationBounds& bounds, Rng& rng);

/// Per-dimension boundary penalty for one coordinate; writes d/da when asked.
double boundary_penalty_1d(double a, double a_bp, double lower, double upper, double beta,
                           double* derivative = nullptr);

/// Sum over dimensions of the one-dimensional penalty.
double boundary_penalty(std::span<const double> a, std::span<const double> a_bp,
                        const ExplorationBounds& bounds, double beta);
double boundary_penalty(const FusionAction& a, const FusionAction& a_bp,
                        const ExplorationBounds& bounds, double beta);

/// Population standard deviation (divide by m). Requires m >= 2.
double ensemble_std(std::span<const double> q_values);

struct ActorLossResult {
  double loss = 0.0;
  Eigen::VectorXd grad;  // w.r.t. actor online parameters
  double mean_q = 0.0;
  double boundary_penalty = 0.0;
  double std_term = 0.0;
};

/// Batch mean of -mean_i Q_i(s, mu(s)) + eta * d(mu(s), mu_bp(s)) + lambda * std_i Q_i(s, mu(s)).
/// `states` is state_dim x N, `baseline_actions` is 10 x N.
ActorLossResult actor_loss(const ActorPolicy& actor, const CriticEnsemble& critics,
                           const Eigen::MatrixXd& states, const Eigen::MatrixXd& baseline_actions,
                           const ExplorationBounds& bounds, const PenaltyConfig& cfg);

/// Critic inputs for one mini-batch, shared by every ensemble member.
struct CriticBatch {
  std::size_t list_length = 0;
  std::size_t batch_size = 0;
  Eigen::MatrixXd current;        // (state_dim + 10) x (B * l)
  Eigen::VectorXd reward_sums;    // B
  std::vector<std::uint8_t> terminal;  // B
  Eigen::MatrixXd next;           // (state_dim + 10) x (B * l); target-actor actions
  Eigen::VectorXd next_penalty;   // B; sum_j d(mu'(s'), mu_bp(s')), 0 when terminal
};

CriticBatch prepare_critic_batch(std::span<const Transition* const> batch, const ActorPolicy& actor,
                                 const ExplorationBounds& bounds, double beta);

struct CriticLossResult {
  double loss = 0.0;
  Eigen::VectorXd grad;  // w.r.t. critic online parameters
  double td_loss = 0.0;
  double penalty_term = 0.0;
};

CriticLossResult critic_loss(const Mlp& critic, const Mlp& target_critic, const CriticBatch& batch,
                             const PenaltyConfig& cfg, CriticPenaltyMode mode);

CriticLossResult critic_loss(const Mlp& critic, const Mlp& target_critic, const ActorPolicy& actor,
                             std::span<const Transition> batch, const ExplorationBounds& bounds,
                             const PenaltyConfig& cfg, CriticPenaltyMode mode);

/// FusionPolicy adapter around a trained actor. In user-state-only mode one
/// action is computed from the first candidate and broadcast.
class ActorFusionPolicy final : public FusionPolicy {
 public:
  explicit ActorFusionPolicy(const ActorPolicy& actor) : actor_(actor) {}
  void act_request(const RequestState& request, std::span<FusionAction> actions,
                   std::span<FusionAction> baselines, Rng& rng) const override;

 private:
  const ActorPolicy& actor_;
};

/// Bounded uniform exploration around a baseline policy.
class ExplorationPolicy final : public FusionPolicy {
 public:
  ExplorationPolicy(const FusionPolicy& baseline, ExplorationBounds bounds);
  void act_request(const RequestState& request, std::span<FusionAction> actions,
                   std::span<FusionAction> baselines, Rng& rng) const override;

 private:
  const FusionPolicy& baseline_;
  ExplorationBounds bounds_;
};

/// Stacks flattened sub-states column-wise.
Eigen::MatrixXd stack_states(const RequestState& request);

void write_actor(ByteWriter& w, const ActorPolicy& actor);
ActorPolicy read_actor(ByteReader& r);

}  // namespace mtf
