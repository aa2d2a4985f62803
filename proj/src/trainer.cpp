#include "mtf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mtf {

namespace {

constexpr std::string_view kLogMagic = "MTFLOG01";
constexpr std::uint32_t kLogVersion = 1;
constexpr std::string_view kPolicyMagic = "MTFPOL01";
constexpr std::uint32_t kPolicyVersion = 1;

constexpr std::uint64_t kTagSessionUser = 0x05e5;
constexpr std::uint64_t kTagMinibatch = 0x7a1;
constexpr std::uint64_t kTagActorInit = 0xac7;
constexpr std::uint64_t kTagCriticInit = 0xc1;
constexpr std::uint64_t kTagEval = 0xe7a1;
constexpr std::uint64_t kTagHeldout = 0x4e1d;
constexpr std::uint64_t kTagCollect = 0xc011;
constexpr std::uint64_t kTagTrain = 0x7a17;

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void put_transition(ByteWriter& w, const Transition& t) {
  w.put<std::uint64_t>(t.session_id);
  w.put<std::uint64_t>(t.user_id);
  w.put<std::uint32_t>(t.round_id);
  w.put<std::uint32_t>(t.request_index);
  w.put<std::uint8_t>(t.terminal ? 1 : 0);
  w.put_doubles(t.states);
  w.put_doubles(t.actions);
  w.put_doubles(t.baseline_actions);
  w.put_doubles(t.rewards);
  w.put_bytes(t.labels);
  if (!t.terminal) {
    w.put_doubles(t.next_states);
    w.put_doubles(t.next_baseline_actions);
  }
}

Transition get_transition(ByteReader& r, std::uint32_t state_dim, std::size_t l) {
  Transition t;
  t.state_dim = state_dim;
  t.session_id = r.get<std::uint64_t>();
  t.user_id = r.get<std::uint64_t>();
  t.round_id = r.get<std::uint32_t>();
  t.request_index = r.get<std::uint32_t>();
  const std::uint8_t terminal = r.get<std::uint8_t>();
  if (terminal > 1) throw FormatError("transition log: bad terminal flag");
  t.terminal = terminal == 1;
  auto read_vec = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    r.get_doubles(v);
  };
  read_vec(t.states, l * state_dim);
  read_vec(t.actions, l * kActionDim);
  read_vec(t.baseline_actions, l * kActionDim);
  read_vec(t.rewards, l);
  const auto labels = r.get_bytes(l);
  t.labels.assign(labels.begin(), labels.end());
  if (!t.terminal) {
    read_vec(t.next_states, l * state_dim);
    read_vec(t.next_baseline_actions, l * kActionDim);
  }
  return t;
}

void put_bounds(ByteWriter& w, const ExplorationBounds& b) {
  w.put_doubles(b.lower);
  w.put_doubles(b.upper);
}

ExplorationBounds get_bounds(ByteReader& r) {
  ExplorationBounds b;
  r.get_doubles(b.lower);
  r.get_doubles(b.upper);
  b.validate();
  return b;
}

Eigen::MatrixXd batch_states(std::span<const Transition* const> batch, std::size_t dim, std::size_t l) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch.size() * l));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t j = 0; j < l; ++j) {
      out.col(static_cast<Eigen::Index>(b * l + j)) =
          Eigen::Map<const Eigen::VectorXd>(batch[b]->states.data() + j * dim, static_cast<Eigen::Index>(dim));
    }
  }
  return out;
}

Eigen::MatrixXd batch_baselines(std::span<const Transition* const> batch, std::size_t l) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(kActionDim), static_cast<Eigen::Index>(batch.size() * l));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t j = 0; j < l; ++j) {
      out.col(static_cast<Eigen::Index>(b * l + j)) = Eigen::Map<const Eigen::VectorXd>(
          batch[b]->baseline_actions.data() + j * kActionDim, static_cast<Eigen::Index>(kActionDim));
    }
  }
  return out;
}

}  // namespace

void Transition::validate() const {
  const std::size_t l = rewards.size();
  if (state_dim == 0) throw std::invalid_argument("transition: zero state width");
  if (l == 0) throw std::invalid_argument("transition: empty item list");
  if (states.size() != l * state_dim) throw std::invalid_argument("transition: states shape");
  if (actions.size() != l * kActionDim) throw std::invalid_argument("transition: actions shape");
  if (baseline_actions.size() != l * kActionDim) throw std::invalid_argument("transition: baseline shape");
  if (labels.size() != l) throw std::invalid_argument("transition: labels shape");
  if (terminal) {
    if (!next_states.empty() || !next_baseline_actions.empty()) {
      throw std::invalid_argument("transition: terminal record carries a next state");
    }
  } else if (next_states.size() != l * state_dim || next_baseline_actions.size() != l * kActionDim) {
    throw std::invalid_argument("transition: next-state shape");
  }
  if (!all_finite(states) || !all_finite(actions) || !all_finite(baseline_actions) || !all_finite(rewards) ||
      !all_finite(next_states) || !all_finite(next_baseline_actions)) {
    throw std::invalid_argument("transition: non-finite value");
  }
  for (std::uint8_t label : labels) {
    if (label > 1) throw std::invalid_argument("transition: label outside {0, 1}");
  }
}

void ReplayDataset::append(Transition t) {
  t.validate();
  if (!records_.empty()) {
    const Transition& first = records_.front();
    if (t.state_dim != first.state_dim || t.list_length() != first.list_length()) {
      throw std::invalid_argument("replay: record shape differs from the dataset");
    }
  }
  records_.push_back(std::move(t));
}

void ReplayDataset::append(std::span<const Transition> ts) {
  for (const auto& t : ts) append(t);
}

std::uint32_t ReplayDataset::round_count() const {
  std::uint32_t n = 0;
  for (const auto& t : records_) n = std::max(n, t.round_id + 1);
  return n;
}

std::vector<const Transition*> ReplayDataset::round(std::uint32_t round_id) const {
  std::vector<const Transition*> out;
  for (const auto& t : records_) {
    if (t.round_id == round_id) out.push_back(&t);
  }
  return out;
}

std::vector<const Transition*> ReplayDataset::up_to(std::uint32_t last_round) const {
  std::vector<const Transition*> out;
  for (const auto& t : records_) {
    if (t.round_id <= last_round) out.push_back(&t);
  }
  return out;
}

std::vector<std::uint8_t> ReplayDataset::serialize() const {
  ByteWriter w;
  w.put_magic(kLogMagic);
  w.put<std::uint32_t>(kLogVersion);
  w.put<std::uint32_t>(records_.empty() ? 0 : records_.front().state_dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kActionDim));
  w.put<std::uint32_t>(records_.empty() ? 0 : static_cast<std::uint32_t>(records_.front().list_length()));
  w.put<std::uint32_t>(round_count());
  w.put<std::uint64_t>(records_.size());
  for (const auto& t : records_) {
    ByteWriter rec;
    put_transition(rec, t);
    w.put<std::uint64_t>(rec.size());
    w.put_bytes(rec.bytes());
  }
  return std::move(w).finish();
}

ReplayDataset ReplayDataset::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r = ByteReader::checked(bytes, "transition log");
  r.expect_magic(kLogMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kLogVersion) throw FormatError("transition log: unsupported version " + std::to_string(version));
  const auto state_dim = r.get<std::uint32_t>();
  const auto action_dim = r.get<std::uint32_t>();
  const auto l = r.get<std::uint32_t>();
  const auto rounds = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (action_dim != kActionDim) throw FormatError("transition log: action width mismatch");
  if (count > 0 && (state_dim == 0 || l == 0)) throw FormatError("transition log: zero dimensions");

  ReplayDataset out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint64_t>();
    if (len > r.remaining()) throw FormatError("transition log: truncated record");
    ByteReader rec(r.get_bytes(static_cast<std::size_t>(len)));
    Transition t = get_transition(rec, state_dim, l);
    if (!rec.at_end()) throw FormatError("transition log: record length mismatch");
    try {
      out.append(std::move(t));
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("transition log: ") + e.what());
    }
  }
  if (!r.at_end()) throw FormatError("transition log: trailing bytes");
  if (out.round_count() != rounds) throw FormatError("transition log: round count mismatch");
  return out;
}

void ReplayDataset::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

ReplayDataset ReplayDataset::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (critic_count < 2) throw std::invalid_argument("train: critic_count must be >= 2");
  if (metrics_every < 1) throw std::invalid_argument("train: metrics_every must be >= 1");
  if (shapes.actor_hidden.empty() || shapes.critic_hidden.empty()) {
    throw std::invalid_argument("train: networks need at least one hidden layer");
  }
  for (std::size_t w : shapes.actor_hidden) {
    if (w == 0) throw std::invalid_argument("train: zero-width actor layer");
  }
  for (std::size_t w : shapes.critic_hidden) {
    if (w == 0) throw std::invalid_argument("train: zero-width critic layer");
  }
  if (!(soft_update.rate > 0.0 && soft_update.rate <= 1.0)) {
    throw std::invalid_argument("train: soft_update_rate must lie in (0, 1]");
  }
  if (soft_update.delay < 1) throw std::invalid_argument("train: soft_update_delay must be >= 1");
  for (const AdamConfig* a : {&actor_adam, &critic_adam}) {
    if (!(a->step_size > 0.0) || !(a->epsilon > 0.0) || !(a->beta1 >= 0.0 && a->beta1 < 1.0) ||
        !(a->beta2 >= 0.0 && a->beta2 < 1.0)) {
      throw std::invalid_argument("train: invalid Adam hyperparameters");
    }
  }
  penalty.validate();
  bounds.validate();
}

Learner Learner::fresh(StateLayout layout, const TrainConfig& config) {
  SoftUpdateSchedule schedule = config.soft_update;
  schedule.calls = 0;
  return Learner{
      ActorPolicy::midpoint(layout, config.shapes, derive_seed(config.seed, {kTagActorInit}), schedule,
                            config.actor_adam, config.user_state_only),
      CriticEnsemble(config.critic_count, layout.total(), config.shapes,
                     derive_seed(config.seed, {kTagCriticInit}), schedule, config.critic_adam),
  };
}

std::string StepMetrics::to_line(std::uint32_t round_id) const {
  std::ostringstream out;
  out << "round=" << round_id << " step=" << step << " actor_loss=" << fmt(actor_loss)
      << " mean_q=" << fmt(mean_q) << " boundary_penalty=" << fmt(boundary_penalty)
      << " std_term=" << fmt(std_term) << " critic_penalty=" << fmt(critic_penalty) << " critic_loss=";
  for (std::size_t i = 0; i < critic_losses.size(); ++i) out << (i ? "," : "") << fmt(critic_losses[i]);
  return out.str();
}

std::vector<Transition> collect_round(const World& world, const FusionPolicy& baseline,
                                      const ExplorationBounds& bounds, std::size_t n_sessions,
                                      std::uint64_t seed, std::uint32_t round_id, CollectStats* stats) {
  const ExplorationPolicy explorer(baseline, bounds);
  std::vector<Transition> out;
  CollectStats local;
  for (std::size_t i = 0; i < n_sessions; ++i) {
    Rng pick(derive_seed(seed, {kTagSessionUser, round_id, i}));
    const SimUser& user = world.users[pick.below(world.users.size())];
    const std::uint64_t session_seed = derive_seed(seed, {round_id, i, 1});
    const std::uint64_t session_id = (std::uint64_t{round_id} << 32) | i;
    SessionTrace trace = rollout_session(explorer, world, user, session_seed, session_id, round_id);
    ++local.sessions;
    local.requests += trace.transitions.size();
    local.total_reward += trace.total_reward;
    for (auto& t : trace.transitions) out.push_back(std::move(t));
  }
  if (stats) *stats = local;
  return out;
}

TrainResult train_round(const ReplayDataset& dataset, StateLayout layout, const TrainConfig& config,
                        std::uint32_t round_id, std::optional<Learner> start) {
  config.validate();
  const std::vector<const Transition*> data =
      config.union_rounds ? dataset.up_to(round_id) : dataset.round(round_id);
  if (data.empty()) {
    throw TrainingError("train: no transitions for round " + std::to_string(round_id));
  }
  const std::size_t dim = data.front()->state_dim;
  const std::size_t l = data.front()->list_length();

  if (start && start->actor.layout() != layout) throw TrainingError("train: learner layout differs");
  if (layout.total() != dim) throw TrainingError("train: state width does not match the learner");

  Learner learner = start ? std::move(*start) : Learner::fresh(layout, config);
  if (learner.critics.size() < 2) throw TrainingError("train: ensemble needs >= 2 critics");

  Rng rng(derive_seed(config.seed, {kTagMinibatch, round_id}));
  std::vector<const Transition*> batch(config.batch_size);
  TrainResult result{std::move(learner), {}};
  Learner& L = result.learner;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (auto& slot : batch) slot = data[rng.below(data.size())];

    const CriticBatch cb = prepare_critic_batch(batch, L.actor, config.bounds, config.penalty.beta);
    StepMetrics m;
    m.step = step;
    m.critic_losses.reserve(L.critics.size());
    for (std::size_t i = 0; i < L.critics.size(); ++i) {
      CriticMember& c = L.critics[i];
      const CriticLossResult res =
          critic_loss(c.nets.online, c.nets.target, cb, config.penalty, config.critic_penalty_mode);
      if (!std::isfinite(res.loss) || !res.grad.allFinite()) {
        throw TrainingError("train: non-finite critic loss at round " + std::to_string(round_id) + " step " +
                            std::to_string(step) + " critic " + std::to_string(i) + " (loss " +
                            fmt(res.loss) + ")");
      }
      adam_step(c.nets.online.mutable_params(), res.grad, c.adam);
      m.critic_losses.push_back(res.loss);
      m.critic_penalty = res.penalty_term;
    }

    const ActorLossResult ar = actor_loss(L.actor, L.critics, batch_states(batch, dim, l),
                                          batch_baselines(batch, l), config.bounds, config.penalty);
    if (!std::isfinite(ar.loss) || !ar.grad.allFinite()) {
      throw TrainingError("train: non-finite actor loss at round " + std::to_string(round_id) + " step " +
                          std::to_string(step) + " (loss " + fmt(ar.loss) + ", mean_q " + fmt(ar.mean_q) +
                          ", penalty " + fmt(ar.boundary_penalty) + ")");
    }
    adam_step(L.actor.nets.online.mutable_params(), ar.grad, L.actor.adam);
    m.actor_loss = ar.loss;
    m.mean_q = ar.mean_q;
    m.boundary_penalty = ar.boundary_penalty;
    m.std_term = ar.std_term;

    maybe_soft_update(L.actor.nets);
    for (auto& c : L.critics.members()) maybe_soft_update(c.nets);

    if (step % config.metrics_every == 0 || step == config.steps) result.metrics.push_back(std::move(m));
  }
  return result;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "round=" << round_id << '\n'
      << "sessions=" << session_rewards.size() << '\n'
      << "mean_session_reward=" << fmt(mean_session_reward) << '\n'
      << "session_reward_stderr=" << fmt(session_reward_stderr) << '\n'
      << "mean_valid_consumptions=" << fmt(mean_valid_consumptions) << '\n'
      << "mean_session_length=" << fmt(mean_session_length) << '\n'
      << gauc.to_text();
  return out.str();
}

EvalReport evaluate_policy(const World& world, const ActorPolicy& actor, std::span<const Transition> heldout,
                           std::size_t n_sessions, std::uint64_t seed, std::uint32_t round_id) {
  if (actor.layout() != world.layout()) throw std::invalid_argument("evaluate: policy/world state layout mismatch");
  const ActorFusionPolicy policy(actor);
  EvalReport report;
  report.round_id = round_id;
  double valid = 0.0;
  double length = 0.0;
  for (std::size_t i = 0; i < n_sessions; ++i) {
    Rng pick(derive_seed(seed, {kTagEval, i}));
    const SimUser& user = world.users[pick.below(world.users.size())];
    const SessionTrace trace = rollout_session(policy, world, user, derive_seed(seed, {kTagEval, i, 1}), i, round_id);
    report.session_rewards.push_back(trace.total_reward);
    valid += trace.valid_consumptions;
    length += trace.session_length;
  }
  if (n_sessions > 0) {
    const double n = static_cast<double>(n_sessions);
    double sum = 0.0;
    for (double r : report.session_rewards) sum += r;
    report.mean_session_reward = sum / n;
    report.mean_valid_consumptions = valid / n;
    report.mean_session_length = length / n;
    if (n_sessions > 1) {
      double ss = 0.0;
      for (double r : report.session_rewards) ss += (r - report.mean_session_reward) * (r - report.mean_session_reward);
      report.session_reward_stderr = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
  }
  if (!heldout.empty()) report.gauc = weighted_gauc(build_eval_samples(heldout, actor));
  return report;
}

std::vector<Transition> collect_heldout(const World& world, const TrainConfig& config, std::size_t n_sessions,
                                        std::uint64_t seed) {
  const ConstantPolicy midpoint(FusionAction::midpoint());
  return collect_round(world, midpoint, config.bounds, n_sessions, derive_seed(seed, {kTagHeldout}), 0);
}

std::uint64_t ptm_eval_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {kTagEval}); }
std::uint64_t ptm_collect_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {kTagCollect}); }
std::uint64_t ptm_train_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {kTagTrain}); }

std::vector<RoundArtifact> ptm_run(const World& world, const PtmConfig& config, std::uint64_t seed,
                                   const RoundCallback& on_round) {
  if (config.rounds < 1) throw std::invalid_argument("ptm: rounds must be >= 1");
  TrainConfig train = config.train;
  train.seed = ptm_train_seed(seed);
  train.validate();

  const std::vector<Transition> heldout = collect_heldout(world, train, config.heldout_sessions, seed);
  const std::uint64_t collect_seed = ptm_collect_seed(seed);
  const std::uint64_t eval_seed = ptm_eval_seed(seed);

  ReplayDataset dataset;
  std::optional<Learner> learner;
  std::vector<RoundArtifact> artifacts;
  const ConstantPolicy cold_start(FusionAction::midpoint());

  for (std::uint32_t round = 1; round <= config.rounds; ++round) {
    RoundArtifact art;
    art.round_id = round;
    std::optional<ActorFusionPolicy> promoted;
    if (learner) promoted.emplace(learner->actor);
    const FusionPolicy& baseline = promoted ? static_cast<const FusionPolicy&>(*promoted) : cold_start;
    dataset.append(collect_round(world, baseline, train.bounds, config.sessions_per_round, collect_seed, round,
                                 &art.collect));

    std::optional<Learner> start;
    if (train.warm_start && learner) start = std::move(learner);
    TrainResult trained = train_round(dataset, world.layout(), train, round, std::move(start));
    learner = std::move(trained.learner);
    art.metrics = std::move(trained.metrics);

    art.report = evaluate_policy(world, learner->actor, heldout, config.eval_sessions, eval_seed, round);
    PolicyCheckpoint ckpt;
    ckpt.round_id = round;
    ckpt.bounds = train.bounds;
    ckpt.penalty = train.penalty;
    ckpt.critic_penalty_mode = train.critic_penalty_mode;
    ckpt.learner = *learner;
    art.policy_checkpoint = ckpt.serialize();
    if (on_round) on_round(art);
    artifacts.push_back(std::move(art));
  }
  return artifacts;
}

std::vector<std::uint8_t> PolicyCheckpoint::serialize() const {
  ByteWriter w;
  w.put_magic(kPolicyMagic);
  w.put<std::uint32_t>(kPolicyVersion);
  w.put<std::uint32_t>(round_id);
  put_bounds(w, bounds);
  w.put<double>(penalty.eta);
  w.put<double>(penalty.lambda);
  w.put<double>(penalty.delta);
  w.put<double>(penalty.beta);
  w.put<double>(penalty.gamma);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(critic_penalty_mode));
  w.put<std::uint8_t>(learner ? 1 : 0);
  if (learner) {
    write_actor(w, learner->actor);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(learner->critics.size()));
    for (const auto& c : learner->critics.members()) {
      w.put<double>(c.nets.schedule.rate);
      w.put<std::uint32_t>(c.nets.schedule.delay);
      w.put<std::uint64_t>(c.nets.schedule.calls);
      write_mlp(w, c.nets.online);
      write_mlp(w, c.nets.target);
    }
  }
  return std::move(w).finish();
}

PolicyCheckpoint PolicyCheckpoint::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r = ByteReader::checked(bytes, "policy checkpoint");
  r.expect_magic(kPolicyMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kPolicyVersion) throw FormatError("policy checkpoint: unsupported version " + std::to_string(version));
  PolicyCheckpoint out;
  out.round_id = r.get<std::uint32_t>();
  out.bounds = get_bounds(r);
  out.penalty.eta = r.get<double>();
  out.penalty.lambda = r.get<double>();
  out.penalty.delta = r.get<double>();
  out.penalty.beta = r.get<double>();
  out.penalty.gamma = r.get<double>();
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw FormatError("policy checkpoint: unknown critic penalty mode");
  out.critic_penalty_mode = static_cast<CriticPenaltyMode>(mode);
  const auto has_learner = r.get<std::uint8_t>();
  if (has_learner > 1) throw FormatError("policy checkpoint: bad learner flag");
  if (has_learner) {
    ActorPolicy actor = read_actor(r);
    const auto count = r.get<std::uint32_t>();
    if (count < 2) throw FormatError("policy checkpoint: ensemble needs >= 2 critics");
    std::vector<CriticMember> members;
    for (std::uint32_t i = 0; i < count; ++i) {
      SoftUpdateSchedule schedule;
      schedule.rate = r.get<double>();
      schedule.delay = r.get<std::uint32_t>();
      schedule.calls = r.get<std::uint64_t>();
      Mlp online = read_mlp(r);
      Mlp target = read_mlp(r);
      if (!(online.spec() == target.spec()) || online.spec().input_dim() != actor.layout().total() + kActionDim ||
          online.spec().output_dim() != 1) {
        throw FormatError("policy checkpoint: critic shape mismatch");
      }
      const std::size_t n = online.spec().param_count();
      TargetPair pair(std::move(online), schedule);
      pair.target = std::move(target);
      members.push_back(CriticMember{std::move(pair), AdamState::zeros(n)});
    }
    out.learner.emplace(Learner{std::move(actor), CriticEnsemble(std::move(members))});
  }
  if (!r.at_end()) throw FormatError("policy checkpoint: trailing bytes");
  try {
    out.penalty.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("policy checkpoint: ") + e.what());
  }
  return out;
}

}  // namespace mtf
