#include "mtf/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mtf {

namespace {

MlpSpec actor_spec(std::size_t state_dim, const NetShapes& shapes) {
  MlpSpec spec;
  spec.widths.push_back(state_dim);
  spec.widths.insert(spec.widths.end(), shapes.actor_hidden.begin(), shapes.actor_hidden.end());
  spec.widths.push_back(kActionDim);
  spec.output = OutputActivation::kTanh;
  return spec;
}

MlpSpec critic_spec(std::size_t state_dim, const NetShapes& shapes) {
  MlpSpec spec;
  spec.widths.push_back(state_dim + kActionDim);
  spec.widths.insert(spec.widths.end(), shapes.critic_hidden.begin(), shapes.critic_hidden.end());
  spec.widths.push_back(1);
  spec.output = OutputActivation::kIdentity;
  return spec;
}

FusionAction column_action(const Eigen::MatrixXd& actions, Eigen::Index col) {
  FusionAction a;
  for (std::size_t d = 0; d < kActionDim; ++d) {
    a.a[d] = std::clamp(actions(static_cast<Eigen::Index>(d), col), -1.0, 1.0);
  }
  return a;
}

}  // namespace

ExplorationBounds ExplorationBounds::symmetric(double half_width) {
  ExplorationBounds b;
  b.lower.fill(-half_width);
  b.upper.fill(half_width);
  b.validate();
  return b;
}

void ExplorationBounds::validate() const {
  for (std::size_t d = 0; d < kActionDim; ++d) {
    if (!(lower[d] <= upper[d])) throw std::invalid_argument("ExplorationBounds: lower exceeds upper");
    if (lower[d] < -2.0 || upper[d] > 2.0) throw std::invalid_argument("ExplorationBounds: bounds outside [-2, 2]");
  }
}

void PenaltyConfig::validate() const {
  if (!(eta >= 0.0) || !(lambda >= 0.0) || !(delta >= 0.0)) {
    throw std::invalid_argument("PenaltyConfig: penalty weights must be nonnegative");
  }
  if (!(beta > 0.0)) throw std::invalid_argument("PenaltyConfig: beta must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("PenaltyConfig: gamma must lie in [0, 1]");
}

ActorPolicy::ActorPolicy(StateLayout layout, const NetShapes& shapes, std::uint64_t seed,
                         SoftUpdateSchedule schedule, AdamConfig adam_config, bool user_state_only)
    : nets(Mlp::random(actor_spec(layout.total(), shapes), seed), schedule),
      adam(AdamState::zeros(nets.online.params().size(), adam_config)),
      layout_(layout),
      user_state_only_(user_state_only) {}

ActorPolicy::ActorPolicy(StateLayout layout, TargetPair pair, AdamState adam_state, bool user_state_only)
    : nets(std::move(pair)), adam(std::move(adam_state)), layout_(layout), user_state_only_(user_state_only) {}

ActorPolicy ActorPolicy::midpoint(StateLayout layout, const NetShapes& shapes, std::uint64_t seed,
                                  SoftUpdateSchedule schedule, AdamConfig adam_config,
                                  bool user_state_only) {
  Mlp net = Mlp::random(actor_spec(layout.total(), shapes), seed);
  const auto& spec = net.spec();
  const std::size_t last = spec.layers() - 1;
  const std::size_t tail = spec.widths[last + 1] * (spec.widths[last] + 1);
  net.mutable_params().tail(static_cast<Eigen::Index>(tail)).setZero();
  ActorPolicy actor(layout, TargetPair(std::move(net), schedule),
                    AdamState::zeros(spec.param_count(), adam_config), user_state_only);
  return actor;
}

Eigen::MatrixXd ActorPolicy::network_input(const Eigen::MatrixXd& states) const {
  if (static_cast<std::size_t>(states.rows()) != layout_.total()) {
    throw std::invalid_argument("ActorPolicy: state width " + std::to_string(states.rows()) +
                                " != " + std::to_string(layout_.total()));
  }
  if (!user_state_only_) return states;
  Eigen::MatrixXd masked = states;
  const auto begin = static_cast<Eigen::Index>(layout_.user_dim);
  const auto count = static_cast<Eigen::Index>(layout_.item_dim + kHeads);
  masked.middleRows(begin, count).setZero();
  return masked;
}

FusionAction ActorPolicy::act(std::span<const double> state) const {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size()));
  return column_action(act_batch(x), 0);
}

Eigen::MatrixXd ActorPolicy::act_batch(const Eigen::MatrixXd& states) const {
  return nets.online.predict(network_input(states));
}

Eigen::MatrixXd ActorPolicy::target_act_batch(const Eigen::MatrixXd& states) const {
  return nets.target.predict(network_input(states));
}

CriticEnsemble::CriticEnsemble(std::size_t count, std::size_t state_dim, const NetShapes& shapes,
                               std::uint64_t seed, SoftUpdateSchedule schedule, AdamConfig adam) {
  if (count < 2) throw std::invalid_argument("CriticEnsemble: at least two critics required");
  members_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Mlp net = Mlp::random(critic_spec(state_dim, shapes), derive_seed(seed, {0xc417, i}));
    const std::size_t n = net.spec().param_count();
    members_.push_back(CriticMember{TargetPair(std::move(net), schedule), AdamState::zeros(n, adam)});
  }
}

CriticEnsemble::CriticEnsemble(std::vector<CriticMember> members) : members_(std::move(members)) {
  if (members_.size() < 2) throw std::invalid_argument("CriticEnsemble: at least two critics required");
}

FusionAction explore_act(const FusionAction& baseline, const ExplorationBounds& bounds, Rng& rng,
                         std::array<double, kActionDim>* perturbation) {
  FusionAction out;
  for (std::size_t d = 0; d < kActionDim; ++d) {
    const double lo = bounds.lower[d];
    const double hi = bounds.upper[d];
    const double eps = lo == hi ? lo : rng.uniform(lo, hi);
    if (perturbation) (*perturbation)[d] = eps;
    out.a[d] = std::clamp(baseline.a[d] + eps, -1.0, 1.0);
  }
  return out;
}

FusionAction explore_act(const ActorPolicy& baseline_policy, std::span<const double> state,
                         const ExplorationBounds& bounds, Rng& rng) {
  return explore_act(baseline_policy.act(state), bounds, rng);
}

double boundary_penalty_1d(double a, double a_bp, double lower, double upper, double beta,
                           double* derivative) {
  if (!(beta > 0.0)) throw std::invalid_argument("boundary_penalty: beta must be positive");
  const double width = upper - lower;
  if (!(width > 0.0)) throw std::invalid_argument("boundary_penalty: zero-width bounds");
  const double hi = a_bp + upper;
  const double lo = a_bp + lower;
  const double scale = beta * width;
  if (a > lo && a < hi) {
    if (derivative) *derivative = 0.0;
    return 0.0;
  }
  if (a >= hi) {
    const double value = std::exp((a - hi) / scale);
    if (derivative) *derivative = value / scale;
    return value;
  }
  const double value = std::exp((lo - a) / scale);
  if (derivative) *derivative = -value / scale;
  return value;
}

double boundary_penalty(std::span<const double> a, std::span<const double> a_bp,
                        const ExplorationBounds& bounds, double beta) {
  if (a.size() != kActionDim || a_bp.size() != kActionDim) {
    throw std::invalid_argument("boundary_penalty: action width mismatch");
  }
  double total = 0.0;
  for (std::size_t d = 0; d < kActionDim; ++d) {
    total += boundary_penalty_1d(a[d], a_bp[d], bounds.lower[d], bounds.upper[d], beta);
  }
  return total;
}

double boundary_penalty(const FusionAction& a, const FusionAction& a_bp,
                        const ExplorationBounds& bounds, double beta) {
  return boundary_penalty(std::span<const double>(a.a), std::span<const double>(a_bp.a), bounds, beta);
}

double ensemble_std(std::span<const double> q_values) {
  if (q_values.size() < 2) throw std::invalid_argument("ensemble_std: at least two values required");
  const double m = static_cast<double>(q_values.size());
  double mean = 0.0;
  for (double q : q_values) mean += q;
  mean /= m;
  double ss = 0.0;
  for (double q : q_values) ss += (q - mean) * (q - mean);
  return std::sqrt(ss / m);
}

ActorLossResult actor_loss(const ActorPolicy& actor, const CriticEnsemble& critics,
                           const Eigen::MatrixXd& states, const Eigen::MatrixXd& baseline_actions,
                           const ExplorationBounds& bounds, const PenaltyConfig& cfg) {
  const std::size_t m = critics.size();
  if (m < 2) throw std::invalid_argument("actor_loss: ensemble std needs at least two critics");
  const Eigen::Index n = states.cols();
  if (n == 0) throw std::invalid_argument("actor_loss: empty batch");
  if (baseline_actions.rows() != static_cast<Eigen::Index>(kActionDim) || baseline_actions.cols() != n) {
    throw std::invalid_argument("actor_loss: baseline action shape mismatch");
  }

  const ForwardCache actor_cache = actor.nets.online.forward(actor.network_input(states));
  const Eigen::MatrixXd& actions = actor_cache.output();
  const auto state_dim = states.rows();

  Eigen::MatrixXd critic_input(state_dim + static_cast<Eigen::Index>(kActionDim), n);
  critic_input.topRows(state_dim) = states;
  critic_input.bottomRows(static_cast<Eigen::Index>(kActionDim)) = actions;

  std::vector<ForwardCache> caches;
  caches.reserve(m);
  Eigen::MatrixXd q(static_cast<Eigen::Index>(m), n);
  for (std::size_t i = 0; i < m; ++i) {
    caches.push_back(critics[i].nets.online.forward(critic_input));
    q.row(static_cast<Eigen::Index>(i)) = caches.back().output();
  }

  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  const Eigen::RowVectorXd mean_q = q.colwise().mean();
  const Eigen::MatrixXd centered = q.rowwise() - mean_q;
  const Eigen::RowVectorXd std_q = (centered.colwise().squaredNorm() / md).cwiseSqrt();

  // dLoss/dQ_i per sample; the std term contributes (Q_i - mean) / (m * std).
  Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(q.rows(), n, -1.0 / md);
  for (Eigen::Index b = 0; b < n; ++b) {
    if (std_q(b) > 0.0) dq.col(b) += cfg.lambda * centered.col(b) / (md * std_q(b));
  }
  dq /= nd;

  Eigen::MatrixXd d_actions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kActionDim), n);
  for (std::size_t i = 0; i < m; ++i) {
    const Gradients g = critics[i].nets.online.backward(caches[i], dq.row(static_cast<Eigen::Index>(i)), false);
    d_actions += g.input.bottomRows(static_cast<Eigen::Index>(kActionDim));
  }

  double penalty_sum = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    for (std::size_t d = 0; d < kActionDim; ++d) {
      const auto row = static_cast<Eigen::Index>(d);
      double deriv = 0.0;
      penalty_sum += boundary_penalty_1d(actions(row, b), baseline_actions(row, b), bounds.lower[d],
                                         bounds.upper[d], cfg.beta, &deriv);
      d_actions(row, b) += cfg.eta * deriv / nd;
    }
  }

  ActorLossResult result;
  result.mean_q = mean_q.mean();
  result.boundary_penalty = penalty_sum / nd;
  result.std_term = std_q.mean();
  result.loss = -result.mean_q + cfg.eta * result.boundary_penalty + cfg.lambda * result.std_term;
  result.grad = actor.nets.online.backward(actor_cache, d_actions).params;
  return result;
}

CriticBatch prepare_critic_batch(std::span<const Transition* const> batch, const ActorPolicy& actor,
                                 const ExplorationBounds& bounds, double beta) {
  if (batch.empty()) throw std::invalid_argument("critic batch: empty");
  const std::size_t l = batch.front()->list_length();
  const std::size_t dim = actor.layout().total();
  const std::size_t b_count = batch.size();
  const auto in_dim = static_cast<Eigen::Index>(dim + kActionDim);
  const auto cols = static_cast<Eigen::Index>(b_count * l);

  CriticBatch out;
  out.list_length = l;
  out.batch_size = b_count;
  out.current.resize(in_dim, cols);
  out.reward_sums = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b_count));
  out.terminal.resize(b_count);
  out.next = Eigen::MatrixXd::Zero(in_dim, cols);
  out.next_penalty = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b_count));

  Eigen::MatrixXd next_states = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), cols);
  Eigen::MatrixXd next_baselines = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kActionDim), cols);
  for (std::size_t b = 0; b < b_count; ++b) {
    const Transition& t = *batch[b];
    if (t.list_length() != l) throw std::invalid_argument("critic batch: mixed list lengths");
    if (t.state_dim != dim) throw std::invalid_argument("critic batch: state width mismatch");
    out.terminal[b] = t.terminal ? 1 : 0;
    for (std::size_t j = 0; j < l; ++j) {
      const auto col = static_cast<Eigen::Index>(b * l + j);
      out.current.col(col).head(static_cast<Eigen::Index>(dim)) =
          Eigen::Map<const Eigen::VectorXd>(t.states.data() + j * dim, static_cast<Eigen::Index>(dim));
      out.current.col(col).tail(static_cast<Eigen::Index>(kActionDim)) =
          Eigen::Map<const Eigen::VectorXd>(t.actions.data() + j * kActionDim, static_cast<Eigen::Index>(kActionDim));
      out.reward_sums(static_cast<Eigen::Index>(b)) += t.rewards[j];
      if (!t.terminal) {
        next_states.col(col) =
            Eigen::Map<const Eigen::VectorXd>(t.next_states.data() + j * dim, static_cast<Eigen::Index>(dim));
        next_baselines.col(col) = Eigen::Map<const Eigen::VectorXd>(
            t.next_baseline_actions.data() + j * kActionDim, static_cast<Eigen::Index>(kActionDim));
      }
    }
  }

  const Eigen::MatrixXd next_actions = actor.target_act_batch(next_states);
  out.next.topRows(static_cast<Eigen::Index>(dim)) = next_states;
  out.next.bottomRows(static_cast<Eigen::Index>(kActionDim)) = next_actions;
  for (std::size_t b = 0; b < b_count; ++b) {
    if (out.terminal[b]) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      const auto col = static_cast<Eigen::Index>(b * l + j);
      for (std::size_t d = 0; d < kActionDim; ++d) {
        const auto row = static_cast<Eigen::Index>(d);
        total += boundary_penalty_1d(next_actions(row, col), next_baselines(row, col), bounds.lower[d],
                                     bounds.upper[d], beta);
      }
    }
    out.next_penalty(static_cast<Eigen::Index>(b)) = total;
  }
  return out;
}

CriticLossResult critic_loss(const Mlp& critic, const Mlp& target_critic, const CriticBatch& batch,
                             const PenaltyConfig& cfg, CriticPenaltyMode mode) {
  const auto l = static_cast<Eigen::Index>(batch.list_length);
  const auto b_count = static_cast<Eigen::Index>(batch.batch_size);
  const double nd = static_cast<double>(batch.batch_size);

  const ForwardCache cache = critic.forward(batch.current);
  const Eigen::MatrixXd next_q = target_critic.predict(batch.next);

  Eigen::VectorXd residual(b_count);
  for (Eigen::Index b = 0; b < b_count; ++b) {
    const double q_sum = cache.output().middleCols(b * l, l).sum();
    double y = batch.reward_sums(b);
    if (!batch.terminal[static_cast<std::size_t>(b)]) {
      double bootstrap = next_q.middleCols(b * l, l).sum();
      if (mode == CriticPenaltyMode::kTargetSubtract) bootstrap -= cfg.delta * batch.next_penalty(b);
      y += cfg.gamma * bootstrap;
    }
    residual(b) = q_sum - y;
  }

  Eigen::MatrixXd d_out(1, b_count * l);
  for (Eigen::Index b = 0; b < b_count; ++b) {
    d_out.middleCols(b * l, l).setConstant(2.0 * residual(b) / nd);
  }

  CriticLossResult result;
  result.td_loss = residual.squaredNorm() / nd;
  result.penalty_term = cfg.delta * batch.next_penalty.sum() / nd;
  result.loss = result.td_loss + (mode == CriticPenaltyMode::kLiteral ? result.penalty_term : 0.0);
  result.grad = critic.backward(cache, d_out).params;
  return result;
}

CriticLossResult critic_loss(const Mlp& critic, const Mlp& target_critic, const ActorPolicy& actor,
                             std::span<const Transition> batch, const ExplorationBounds& bounds,
                             const PenaltyConfig& cfg, CriticPenaltyMode mode) {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& t : batch) ptrs.push_back(&t);
  return critic_loss(critic, target_critic, prepare_critic_batch(ptrs, actor, bounds, cfg.beta), cfg, mode);
}

Eigen::MatrixXd stack_states(const RequestState& request) {
  if (request.sub_states.empty()) throw std::invalid_argument("stack_states: empty request");
  const std::size_t dim = request.sub_states.front().layout().total();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(request.sub_states.size()));
  for (std::size_t c = 0; c < request.sub_states.size(); ++c) {
    request.sub_states[c].flatten_into(std::span(out.col(static_cast<Eigen::Index>(c)).data(), dim));
  }
  return out;
}

void ActorFusionPolicy::act_request(const RequestState& request, std::span<FusionAction> actions,
                                    std::span<FusionAction> baselines, Rng&) const {
  const std::size_t n = request.sub_states.size();
  if (actor_.user_state_only()) {
    const FusionAction a = actor_.act(request.sub_states.front().flatten());
    std::fill_n(actions.begin(), n, a);
    std::fill_n(baselines.begin(), n, a);
    return;
  }
  const Eigen::MatrixXd out = actor_.act_batch(stack_states(request));
  for (std::size_t c = 0; c < n; ++c) {
    actions[c] = column_action(out, static_cast<Eigen::Index>(c));
    baselines[c] = actions[c];
  }
}

ExplorationPolicy::ExplorationPolicy(const FusionPolicy& baseline, ExplorationBounds bounds)
    : baseline_(baseline), bounds_(bounds) {
  bounds_.validate();
}

void ExplorationPolicy::act_request(const RequestState& request, std::span<FusionAction> actions,
                                    std::span<FusionAction> baselines, Rng& rng) const {
  std::vector<FusionAction> scratch(request.sub_states.size());
  baseline_.act_request(request, baselines, scratch, rng);
  for (std::size_t c = 0; c < request.sub_states.size(); ++c) {
    actions[c] = explore_act(baselines[c], bounds_, rng);
  }
}

void write_actor(ByteWriter& w, const ActorPolicy& actor) {
  const auto& layout = actor.layout();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(layout.user_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(layout.item_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(layout.context_dim));
  w.put<std::uint8_t>(actor.user_state_only() ? 1 : 0);
  w.put<double>(actor.nets.schedule.rate);
  w.put<std::uint32_t>(actor.nets.schedule.delay);
  w.put<std::uint64_t>(actor.nets.schedule.calls);
  write_mlp(w, actor.nets.online);
  write_mlp(w, actor.nets.target);
}

ActorPolicy read_actor(ByteReader& r) {
  StateLayout layout;
  layout.user_dim = r.get<std::uint32_t>();
  layout.item_dim = r.get<std::uint32_t>();
  layout.context_dim = r.get<std::uint32_t>();
  const bool user_only = r.get<std::uint8_t>() != 0;
  SoftUpdateSchedule schedule;
  schedule.rate = r.get<double>();
  schedule.delay = r.get<std::uint32_t>();
  schedule.calls = r.get<std::uint64_t>();
  Mlp online = read_mlp(r);
  Mlp target = read_mlp(r);
  if (!(online.spec() == target.spec())) throw FormatError("actor: online/target shape mismatch");
  if (online.spec().input_dim() != layout.total() || online.spec().output_dim() != kActionDim) {
    throw FormatError("actor: network shape does not match state layout");
  }
  TargetPair pair(std::move(online), schedule);
  pair.target = std::move(target);
  const std::size_t n = pair.online.spec().param_count();
  return ActorPolicy(layout, std::move(pair), AdamState::zeros(n), user_only);
}

}  // namespace mtf
