#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mtf/binary_io.hpp"
#include "mtf/reward.hpp"
#include "mtf/trainer.hpp"

using namespace mtf;

namespace {

World small_world(std::uint64_t seed = 5) { return gen_world(seed, 30, 200); }

TrainConfig small_train() {
  TrainConfig c;
  c.batch_size = 16;
  c.steps = 40;
  c.critic_count = 3;
  c.shapes.actor_hidden = {16, 8};
  c.shapes.critic_hidden = {16, 8};
  c.metrics_every = 10;
  c.seed = 11;
  return c;
}

ReplayDataset collected(const World& w, std::uint32_t rounds, std::size_t sessions) {
  ReplayDataset d;
  const ConstantPolicy mid(FusionAction::midpoint());
  for (std::uint32_t r = 1; r <= rounds; ++r) {
    d.append(collect_round(w, mid, ExplorationBounds::symmetric(0.15), sessions, 99, r));
  }
  return d;
}

/// Every reward equal; with gamma = 0 the critic only has to learn a constant.
ReplayDataset constant_reward_dataset(std::size_t n, StateLayout layout) {
  ReplayDataset d;
  Rng rng(3);
  const std::size_t dim = layout.total();
  for (std::size_t i = 0; i < n; ++i) {
    Transition t;
    t.state_dim = static_cast<std::uint32_t>(dim);
    t.round_id = 1;
    t.terminal = i % 4 == 3;
    for (std::size_t k = 0; k < kListLength * dim; ++k) t.states.push_back(rng.uniform(-1, 1));
    for (std::size_t k = 0; k < kListLength * kActionDim; ++k) {
      t.actions.push_back(rng.uniform(-0.15, 0.15));
      t.baseline_actions.push_back(0.0);
    }
    t.rewards.assign(kListLength, 1.0);
    t.labels.assign(kListLength, 1);
    if (!t.terminal) {
      for (std::size_t k = 0; k < kListLength * dim; ++k) t.next_states.push_back(rng.uniform(-1, 1));
      t.next_baseline_actions.assign(kListLength * kActionDim, 0.0);
    }
    d.append(std::move(t));
  }
  return d;
}

double min_td_loss(const TrainResult& r) {
  double best = 1e300;
  for (const auto& m : r.metrics) {
    double worst = 0.0;
    for (double v : m.critic_losses) worst = std::max(worst, v);
    best = std::min(best, worst);
  }
  return best;
}

std::vector<std::uint8_t> checkpoint_bytes(const Learner& l, std::uint32_t round, const TrainConfig& c) {
  PolicyCheckpoint ck;
  ck.round_id = round;
  ck.bounds = c.bounds;
  ck.penalty = c.penalty;
  ck.critic_penalty_mode = c.critic_penalty_mode;
  ck.learner = l;
  return ck.serialize();
}

}  // namespace

TEST_CASE("replay log: round trip is byte-identical and corruption is detected") {
  const World w = small_world();
  const ReplayDataset d = collected(w, 2, 8);
  REQUIRE(d.size() > 0);
  CHECK(d.round_count() == 3);
  const auto bytes = d.serialize();
  const ReplayDataset back = ReplayDataset::deserialize(bytes);
  CHECK(back.size() == d.size());
  CHECK(back.serialize() == bytes);

  const auto path = std::filesystem::temp_directory_path() / "mtf_replay_test.log";
  d.save(path);
  CHECK(ReplayDataset::load(path).serialize() == bytes);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[bad.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(ReplayDataset::deserialize(bad), FormatError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_THROWS_AS(ReplayDataset::deserialize(bad), FormatError);

  CHECK(ReplayDataset::deserialize(ReplayDataset().serialize()).empty());

  ReplayDataset mixed;
  Transition t = d[0];
  mixed.append(t);
  t.rewards.pop_back();
  t.labels.pop_back();
  CHECK_THROWS(mixed.append(t));
}

TEST_CASE("replay slices by round") {
  const World w = small_world();
  const ReplayDataset d = collected(w, 3, 5);
  std::size_t total = 0;
  for (std::uint32_t r = 1; r <= 3; ++r) {
    for (const Transition* t : d.round(r)) CHECK(t->round_id == r);
    total += d.round(r).size();
    for (const Transition* t : d.up_to(r)) CHECK(t->round_id <= r);
  }
  CHECK(total == d.size());
  CHECK(d.up_to(3).size() == d.size());
  CHECK(d.round(0).empty());
}

TEST_CASE("collect_round: bounded actions, reward bookkeeping, tagging") {
  const World w = small_world();
  const ConstantPolicy mid(FusionAction::midpoint());
  const auto bounds = ExplorationBounds::symmetric(0.15);
  CHECK(collect_round(w, mid, bounds, 0, 1, 1).empty());

  CollectStats stats;
  const auto ts = collect_round(w, mid, bounds, 25, 7, 4, &stats);
  CHECK(stats.sessions == 25);
  CHECK(stats.requests == ts.size());
  double total = 0.0;
  for (const auto& t : ts) {
    CHECK(t.round_id == 4);
    CHECK((t.session_id >> 32) == 4);
    CHECK_NOTHROW(t.validate());
    for (std::size_t k = 0; k < t.actions.size(); ++k) {
      const double b = t.baseline_actions[k];
      CHECK(b == 0.0);
      CHECK(t.actions[k] >= std::max(-1.0, b - 0.15));
      CHECK(t.actions[k] <= std::min(1.0, b + 0.15));
    }
    total += request_reward(t.rewards);
  }
  CHECK(std::fabs(total - stats.total_reward) <= 1e-9 * std::max(1.0, total));

  // Same seed and round replays; a different round does not.
  CollectStats again;
  collect_round(w, mid, bounds, 25, 7, 4, &again);
  CHECK(again.total_reward == stats.total_reward);
  CollectStats other;
  collect_round(w, mid, bounds, 25, 7, 5, &other);
  CHECK(other.total_reward != stats.total_reward);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig c = small_train();
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS(c.validate());
  c = small_train();
  c.steps = 0;
  CHECK_THROWS(c.validate());
  c = small_train();
  c.critic_count = 1;
  CHECK_THROWS(c.validate());
  c = small_train();
  c.soft_update.rate = 0.0;
  CHECK_THROWS(c.validate());
  c = small_train();
  c.soft_update.delay = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("train_round: constant rewards drive the TD loss to zero") {
  const World w = small_world();
  const ReplayDataset d = constant_reward_dataset(400, w.layout());

  TrainConfig c = small_train();
  c.steps = 5000;
  c.batch_size = 32;
  c.penalty.gamma = 0.0;
  c.metrics_every = 100;
  const TrainResult with_penalties = train_round(d, w.layout(), c, 1);
  MESSAGE("default penalties: min TD loss " << min_td_loss(with_penalties));
  CHECK(min_td_loss(with_penalties) < 1e-3);

  c.penalty.eta = 0.0;
  c.penalty.lambda = 0.0;
  c.penalty.delta = 0.0;
  c.critic_count = 2;
  const TrainResult plain = train_round(d, w.layout(), c, 1);
  MESSAGE("no penalties, m = 2: min TD loss " << min_td_loss(plain));
  CHECK(min_td_loss(plain) < 1e-3);
}

TEST_CASE("train_round: a huge boundary weight keeps the actor inside the bounds") {
  const World w = small_world();
  const ReplayDataset d = collected(w, 1, 60);
  TrainConfig c = small_train();
  c.steps = 400;
  const auto held = collect_heldout(w, c, 40, 123);

  auto inside_fraction = [&](double eta) {
    c.penalty.eta = eta;
    const TrainResult r = train_round(d, w.layout(), c, 1);
    std::size_t inside = 0, total = 0;
    for (const auto& t : held) {
      for (std::size_t j = 0; j < t.list_length(); ++j) {
        const FusionAction a = r.learner.actor.act(t.state(j));
        bool ok = true;
        for (std::size_t k = 0; k < kActionDim; ++k) {
          const double b = t.baseline_actions[j * kActionDim + k];
          ok &= a.a[k] >= b - 0.15 && a.a[k] <= b + 0.15;
        }
        inside += ok ? 1 : 0;
        ++total;
      }
    }
    return static_cast<double>(inside) / static_cast<double>(total);
  };
  const double constrained = inside_fraction(1e6);
  const double free = inside_fraction(0.0);
  MESSAGE("in-bounds fraction: eta 1e6 " << constrained << ", eta 0 " << free);
  CHECK(constrained >= 0.99);
  CHECK(free < 0.99);  // the constraint is doing the work
}

TEST_CASE("train_round: deterministic, ignores future rounds, honors newest-only") {
  const World w = small_world();
  const ReplayDataset d3 = collected(w, 3, 10);
  ReplayDataset d2;
  for (const Transition* t : d3.up_to(2)) d2.append(*t);
  const TrainConfig c = small_train();

  const auto a = checkpoint_bytes(train_round(d3, w.layout(), c, 2).learner, 2, c);
  const auto b = checkpoint_bytes(train_round(d3, w.layout(), c, 2).learner, 2, c);
  CHECK(a == b);
  CHECK(checkpoint_bytes(train_round(d2, w.layout(), c, 2).learner, 2, c) == a);

  TrainConfig newest = c;
  newest.union_rounds = false;
  ReplayDataset only2;
  for (const Transition* t : d3.round(2)) only2.append(*t);
  CHECK(checkpoint_bytes(train_round(d3, w.layout(), newest, 2).learner, 2, c) ==
        checkpoint_bytes(train_round(only2, w.layout(), c, 2).learner, 2, c));

  CHECK_THROWS_AS(train_round(d3, w.layout(), c, 0), TrainingError);
  StateLayout wrong = w.layout();
  wrong.context_dim += 1;
  CHECK_THROWS_AS(train_round(d3, wrong, c, 1), TrainingError);
}

TEST_CASE("train_round: non-finite losses abort with a diagnostic") {
  const World w = small_world();
  ReplayDataset d = constant_reward_dataset(20, w.layout());
  ReplayDataset huge;
  for (auto t : d.records()) {
    t.rewards.assign(t.rewards.size(), 1e200);
    huge.append(std::move(t));
  }
  try {
    train_round(huge, w.layout(), small_train(), 1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("train_round: soft updates run on the fixed schedule") {
  const World w = small_world();
  const ReplayDataset d = collected(w, 1, 10);
  TrainConfig c = small_train();
  c.steps = 31;
  const TrainResult r = train_round(d, w.layout(), c, 1);
  CHECK(r.learner.actor.nets.schedule.calls == 31);
  for (const auto& m : r.learner.critics.members()) CHECK(m.nets.schedule.calls == 31);
  CHECK(r.metrics.size() == 4);  // steps 10, 20, 30, 31
  CHECK(r.metrics.back().step == 31);
  CHECK(r.metrics.back().critic_losses.size() == 3);
}

TEST_CASE("policy checkpoint round trip") {
  const World w = small_world();
  const ReplayDataset d = collected(w, 1, 10);
  const TrainConfig c = small_train();
  const auto bytes = checkpoint_bytes(train_round(d, w.layout(), c, 1).learner, 1, c);
  const PolicyCheckpoint back = PolicyCheckpoint::deserialize(bytes);
  CHECK(back.round_id == 1);
  REQUIRE(back.learner.has_value());
  CHECK(back.learner->critics.size() == 3);
  CHECK(back.serialize() == bytes);
  auto bad = bytes;
  bad[40] ^= 1;
  CHECK_THROWS_AS(PolicyCheckpoint::deserialize(bad), FormatError);
}

TEST_CASE("ptm_run: one round equals collect plus train; promotion is bitwise") {
  const World w = small_world();
  PtmConfig p;
  p.rounds = 2;
  p.sessions_per_round = 12;
  p.eval_sessions = 10;
  p.heldout_sessions = 10;
  p.train = small_train();
  const std::uint64_t seed = 42;

  std::vector<std::uint32_t> seen;
  const auto arts = ptm_run(w, p, seed, [&](const RoundArtifact& a) { seen.push_back(a.round_id); });
  REQUIRE(arts.size() == 2);
  CHECK(seen == std::vector<std::uint32_t>{1, 2});

  // Round 1 by hand.
  TrainConfig t = p.train;
  t.seed = ptm_train_seed(seed);
  ReplayDataset d;
  CollectStats s1;
  d.append(collect_round(w, ConstantPolicy(FusionAction::midpoint()), t.bounds, p.sessions_per_round,
                         ptm_collect_seed(seed), 1, &s1));
  const auto manual = checkpoint_bytes(train_round(d, w.layout(), t, 1).learner, 1, t);
  CHECK(manual == arts[0].policy_checkpoint);
  CHECK(s1.total_reward == arts[0].collect.total_reward);

  PtmConfig one = p;
  one.rounds = 1;
  const auto single = ptm_run(w, one, seed);
  CHECK(single.at(0).policy_checkpoint == manual);

  // Round 2 explored around exactly the round-1 checkpoint.
  const PolicyCheckpoint ck1 = PolicyCheckpoint::deserialize(arts[0].policy_checkpoint);
  const ActorFusionPolicy promoted(ck1.learner->actor);
  CollectStats s2;
  collect_round(w, promoted, t.bounds, p.sessions_per_round, ptm_collect_seed(seed), 2, &s2);
  CHECK(s2.total_reward == arts[1].collect.total_reward);
  CHECK(s2.requests == arts[1].collect.requests);

  // Evaluation reuses the same users and seeds every round.
  CHECK(arts[0].report.session_rewards.size() == 10);
  CHECK(arts[1].report.round_id == 2);
}
