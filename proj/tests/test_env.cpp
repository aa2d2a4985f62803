#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mtf/binary_io.hpp"
#include "mtf/env.hpp"
#include "mtf/reward.hpp"

using namespace mtf;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

SimUser user_with(std::vector<double> latent, double patience = 1.0) {
  SimUser u;
  u.latent = latent;
  u.visible_profile = latent;
  u.patience = patience;
  return u;
}

SimItem item_with(std::uint64_t id, std::vector<double> emb, double popularity = 0.5) {
  SimItem i;
  i.id = id;
  i.category = static_cast<std::uint32_t>(id % kCategories);
  i.embedding = emb;
  i.visible_features = emb;
  i.popularity = popularity;
  return i;
}

}  // namespace

TEST_CASE("gen_world is deterministic and assigns categories round-robin") {
  const World a = gen_world(17, 20, 9);
  const World b = gen_world(17, 20, 9);
  CHECK(a.serialize() == b.serialize());
  CHECK(!(gen_world(18, 20, 9) == a));
  std::array<int, kCategories> counts{};
  for (const auto& item : a.items) ++counts[item.category];
  CHECK(counts == std::array<int, kCategories>{3, 3, 3});
  for (const auto& u : a.users) {
    CHECK(std::fabs(std::inner_product(u.latent.begin(), u.latent.end(), u.latent.begin(), 0.0) - 1.0) <= 1e-12);
    CHECK(u.patience > 0.0);
    CHECK(u.patience <= 1.0);
  }
  CHECK_THROWS(gen_world(1, 0, 9));
  CHECK_THROWS(gen_world(1, 5, 0));
}

TEST_CASE("world serialization round-trips and detects corruption") {
  const World w = gen_world(3, 10, 60);
  auto bytes = w.serialize();
  const World back = World::deserialize(bytes);
  CHECK(back == w);
  CHECK(back.serialize() == bytes);
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(World::deserialize(bytes), FormatError);
}

TEST_CASE("pairwise affinity distribution matches an independent resampling oracle") {
  const World w = gen_world(2024, 1000, 1000);
  std::mt19937_64 gen(77);
  const std::size_t n = 100000;
  std::vector<double> sim(n), oracle(n);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const double scale = w.config.affinity_scale;
  const double pw = w.config.popularity_weight;
  auto sphere = [&](std::size_t d) {
    std::vector<double> v(d);
    double norm = 0.0;
    for (double& x : v) {
      x = normal(gen);
      norm += x * x;
    }
    for (double& x : v) x /= std::sqrt(norm);
    return v;
  };
  for (std::size_t k = 0; k < n; ++k) {
    const auto& u = w.users[gen() % w.users.size()];
    const auto& i = w.items[gen() % w.items.size()];
    sim[k] = true_affinity(w, u, i);
    const auto a = sphere(w.config.latent_dim);
    const auto b = sphere(w.config.latent_dim);
    oracle[k] = scale * std::inner_product(a.begin(), a.end(), b.begin(), 0.0) + pw * (unif(gen) - 0.5);
  }
  auto moments = [](const std::vector<double>& x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    return std::pair{mean, var / static_cast<double>(x.size())};
  };
  const auto [m1, v1] = moments(sim);
  const auto [m2, v2] = moments(oracle);
  CHECK(std::fabs(m1 - m2) < 0.03);
  CHECK(std::fabs(v1 / v2 - 1.0) < 0.05);
  std::sort(sim.begin(), sim.end());
  std::sort(oracle.begin(), oracle.end());
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    const auto k = static_cast<std::size_t>(q * static_cast<double>(n));
    CHECK(std::fabs(sim[k] - oracle[k]) < 0.05);
  }
}

TEST_CASE("mtl_surrogate: range, noiseless limit and per-category noise variances") {
  WorldConfig quiet;
  for (auto& row : quiet.head_noise) row.fill(0.0);
  const World q = gen_world(5, 30, 90, quiet);
  for (const auto& u : q.users) {
    for (const auto& i : q.items) {
      const PredictedScores p = mtl_surrogate(q, u, i);
      for (std::size_t h = 0; h < kHeads; ++h) {
        CHECK(p.scores[h] == sigmoid(head_signal(q, u, i, h)));
      }
    }
  }

  // Small signal keeps logits far from the clamp so they can be inverted.
  WorldConfig cfg;
  cfg.affinity_scale = 0.5;
  const World w = gen_world(9, 400, 750, cfg);
  std::array<std::array<double, kHeads>, kCategories> sum{}, sumsq{};
  std::array<double, kCategories> count{};
  for (std::size_t ui = 0; ui < w.users.size(); ++ui) {
    for (std::size_t ii = 0; ii < w.items.size(); ii += 3) {
      const auto& u = w.users[ui];
      const auto& it = w.items[(ii + ui) % w.items.size()];
      const PredictedScores p = mtl_surrogate(w, u, it);
      for (std::size_t h = 0; h < kHeads; ++h) {
        CHECK(p.scores[h] > 0.0);
        CHECK(p.scores[h] <= 1.0);
        const double noise = logit(p.scores[h]) - head_signal(w, u, it, h);
        sum[it.category][h] += noise;
        sumsq[it.category][h] += noise * noise;
      }
      count[it.category] += 1.0;
    }
  }
  for (std::size_t c = 0; c < kCategories; ++c) {
    CHECK(count[c] > 30000);
    for (std::size_t h = 0; h < kHeads; ++h) {
      const double mean = sum[c][h] / count[c];
      const double var = sumsq[c][h] / count[c] - mean * mean;
      const double expected = w.config.head_noise[c][h] * w.config.head_noise[c][h];
      // Variance of a normal sample variance is 2 sigma^4 / n.
      const double tol = 4.0 * std::sqrt(2.0 / count[c]) * expected + 1e-6;
      CHECK(std::fabs(var - expected) <= tol);
    }
  }
}

TEST_CASE("sample_behaviors: invariants, monotone mean watch, degenerate limit") {
  WorldConfig cfg;
  World w = gen_world(1, 2, 6, cfg);
  const SimItem item = item_with(0, {1, 0, 0, 0});
  double prev = -1.0;
  for (double x = -1.0; x <= 1.0001; x += 0.25) {
    const SimUser user = user_with({x, 0, 0, 0});
    Rng rng(42);
    double total = 0.0;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
      const BehaviorVector v = sample_behaviors(w, user, item, rng);
      CHECK(v.valid_consumption == (v.watch_time > kValidWatchSeconds ? 1 : 0));
      total += v.watch_time;
    }
    const double mean = total / draws;
    CHECK(mean > prev);
    prev = mean;
  }

  WorldConfig cold = cfg;
  cold.affinity_offset = -200.0;
  World c = gen_world(1, 2, 6, cold);
  Rng rng(1);
  for (int k = 0; k < 2000; ++k) {
    const BehaviorVector v = sample_behaviors(c, c.users[0], c.items[k % 6], rng);
    CHECK(v.watch_time < 1e-6);
    CHECK(v.valid_consumption == 0);
    CHECK(v.like + v.share + v.collect == 0);
  }
}

TEST_CASE("expected_item_reward agrees with Monte-Carlo behavior draws") {
  const World w = gen_world(12, 5, 30);
  for (int k = 0; k < 5; ++k) {
    const auto& u = w.users[static_cast<std::size_t>(k)];
    const auto& i = w.items[static_cast<std::size_t>(k * 5)];
    Rng rng(derive_seed(99, {static_cast<std::uint64_t>(k)}));
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int d = 0; d < n; ++d) {
      const double r = item_reward(sample_behaviors(w, u, i, rng), w.config.reward_weights);
      sum += r;
      sumsq += r * r;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    CHECK(std::fabs(mean - expected_item_reward(w, u, i)) <= 4.0 * se);
  }
}

TEST_CASE("continuation: formula, cap and Monte-Carlo rate") {
  const World w = gen_world(4, 3, 9);
  const SimUser user = user_with({1, 0, 0, 0}, 0.8);
  CHECK(continuation_probability(w, user, 1e6, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(continuation_probability(w, user, 1e6, w.config.max_requests) == 0.0);
  Rng rng(3);
  for (int k = 0; k < 100; ++k) CHECK_FALSE(step_session(w, user, 1e6, w.config.max_requests, rng));

  for (double reward : {0.0, 2.0, 5.0}) {
    const double p = sigmoid(w.config.continue_bias + w.config.continue_slope * reward) * 0.8;
    CHECK(continuation_probability(w, user, reward, 2) == doctest::Approx(p).epsilon(1e-14));
    const int n = 100000;
    int hits = 0;
    for (int k = 0; k < n; ++k) hits += step_session(w, user, reward, 2, rng);
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::fabs(hits / static_cast<double>(n) - p) <= 3.0 * se);
  }
}

TEST_CASE("build_state layout and features") {
  const World w = gen_world(6, 4, 12);
  SessionHistory h{3, 6.0, 15, 5};
  const EnhancedState s = build_state(w, w.users[1], w.items[4], h, 2);
  CHECK(s.layout() == w.layout());
  CHECK(s.user_features[w.config.latent_dim] == doctest::Approx(0.3));
  CHECK(s.user_features[w.config.latent_dim + 1] == doctest::Approx(6.0 / 15.0 / 5.0));
  CHECK(s.user_features[w.config.latent_dim + 2] == doctest::Approx(5.0 / 15.0));
  CHECK(s.item_features[w.items[4].category] == 1.0);
  CHECK(s.context == std::vector<double>{0.3, 0.2});
}

TEST_CASE("rollout_session: determinism and bookkeeping") {
  const World w = gen_world(21, 50, 200);
  const ConstantPolicy mid(FusionAction::midpoint());
  bool saw_one = false, saw_max = false;
  double streaming = 0.0, from_traces = 0.0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    const SimUser& u = w.users[s % w.users.size()];
    const SessionTrace a = rollout_session(mid, w, u, s, s);
    const SessionTrace b = rollout_session(mid, w, u, s, s);
    REQUIRE(a.transitions.size() == b.transitions.size());
    for (std::size_t t = 0; t < a.transitions.size(); ++t) {
      CHECK(a.transitions[t].states == b.transitions[t].states);
      CHECK(a.transitions[t].rewards == b.transitions[t].rewards);
    }
    CHECK(a.session_length >= 1);
    CHECK(a.session_length <= w.config.max_requests);
    saw_one |= a.session_length == 1;
    saw_max |= a.session_length == w.config.max_requests;
    double sum = 0.0;
    std::uint32_t valid = 0;
    for (std::size_t t = 0; t < a.transitions.size(); ++t) {
      const Transition& tr = a.transitions[t];
      CHECK_NOTHROW(tr.validate());
      CHECK(tr.list_length() == w.config.list_length);
      CHECK(tr.terminal == (t + 1 == a.transitions.size()));
      if (!tr.terminal) {
        CHECK(tr.next_states == a.transitions[t + 1].states);
        CHECK(tr.next_baseline_actions == a.transitions[t + 1].baseline_actions);
      }
      sum += request_reward(tr.rewards);
      for (auto lab : tr.labels) valid += lab;
      for (double r : tr.rewards) streaming += r;
    }
    CHECK(a.total_reward == doctest::Approx(sum).epsilon(1e-14));
    CHECK(a.valid_consumptions == valid);
    from_traces += a.total_reward;
  }
  CHECK(saw_one);
  CHECK(saw_max);
  CHECK(std::fabs(from_traces - streaming) <= 1e-9 * std::fabs(streaming));
}

TEST_CASE("candidates are shared across policies under one seed") {
  const World w = gen_world(8, 10, 100);
  const auto c1 = sample_candidates(w, 555, 2);
  const auto c2 = sample_candidates(w, 555, 2);
  CHECK(c1 == c2);
  CHECK(c1.size() == w.config.n_candidates);
  std::vector<std::uint32_t> sorted = c1;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

namespace {

// Expected reward of the shown list for each request, where every candidate's
// action is chosen from its category.
struct Request {
  std::vector<PredictedScores> scores;
  std::vector<std::uint32_t> category;
  std::vector<double> value;
};

double list_value(const std::vector<Request>& reqs, const std::array<FusionParams, kCategories>& params,
                  std::size_t l) {
  double total = 0.0;
  std::vector<double> fused;
  for (const auto& r : reqs) {
    fused.resize(r.scores.size());
    for (std::size_t c = 0; c < r.scores.size(); ++c) fused[c] = fuse_scores(r.scores[c], params[r.category[c]]);
    for (std::size_t idx : rank_by_score(fused, l)) total += r.value[idx];
  }
  return total / static_cast<double>(reqs.size() * l);
}

}  // namespace

TEST_CASE("per-category fusion beats the best single fusion (grid search)") {
  const World w = gen_world(31, 200, 600);
  std::vector<Request> reqs;
  for (std::uint64_t s = 0; s < 400; ++s) {
    const SimUser& u = w.users[s % w.users.size()];
    Request r;
    for (std::uint32_t id : sample_candidates(w, s, 0)) {
      const SimItem& it = w.items[id];
      r.scores.push_back(mtl_surrogate(w, u, it));
      r.category.push_back(it.category);
      r.value.push_back(expected_item_reward(w, u, it));
    }
    reqs.push_back(std::move(r));
  }
  // Powers on a {0, 1, 2} grid, biases at the midpoint.
  std::vector<FusionParams> grid;
  for (int code = 0; code < 243; ++code) {
    FusionParams p;
    int c = code;
    for (std::size_t h = 0; h < kHeads; ++h) {
      p.powers[h] = static_cast<double>(c % 3);
      p.biases[h] = 0.05;
      c /= 3;
    }
    grid.push_back(p);
  }
  double best_single = -1.0;
  std::size_t best_idx = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double v = list_value(reqs, {grid[g], grid[g], grid[g]}, w.config.list_length);
    if (v > best_single) {
      best_single = v;
      best_idx = g;
    }
  }
  // Coordinate ascent over categories starting from the best single choice.
  std::array<FusionParams, kCategories> per{grid[best_idx], grid[best_idx], grid[best_idx]};
  double best_per = best_single;
  for (int sweep = 0; sweep < 2; ++sweep) {
    for (std::size_t c = 0; c < kCategories; ++c) {
      for (const auto& g : grid) {
        auto trial = per;
        trial[c] = g;
        const double v = list_value(reqs, trial, w.config.list_length);
        if (v > best_per) {
          best_per = v;
          per = trial;
        }
      }
    }
  }
  const double midpoint = list_value(reqs, {grid[121], grid[121], grid[121]}, w.config.list_length);
  MESSAGE("midpoint " << midpoint << " best single " << best_single << " best per-category " << best_per);
  CHECK(best_per > best_single);
}
