#include "mtf/env.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mtf/binary_io.hpp"

namespace mtf {

namespace {

constexpr std::string_view kWorldMagic = "MTFWLD01";
constexpr std::uint32_t kWorldVersion = 1;

enum StreamTag : std::uint64_t {
  kTagWorld = 1,
  kTagHeadNoise = 2,
  kTagCandidates = 3,
  kTagPolicy = 4,
  kTagBehavior = 5,
  kTagContinue = 6,
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  } while (norm < 1e-12);
  for (double& x : v) x /= norm;
  return v;
}

// Standard normal from a hashed key via Box-Muller; stateless so the MTL
// surrogate stays a pure function of (world, user, item).
double hashed_normal(std::uint64_t key) {
  const std::uint64_t a = mix64(key);
  const std::uint64_t b = mix64(a ^ 0xd1b54a32d192ed03ULL);
  const double u1 = (static_cast<double>(a >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double dot(std::span<const double> x, std::span<const double> y) {
  return std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
}

void put_config(ByteWriter& w, const WorldConfig& c) {
  w.put<std::uint32_t>(c.n_users);
  w.put<std::uint32_t>(c.n_items);
  w.put<std::uint32_t>(c.latent_dim);
  w.put<double>(c.profile_noise);
  w.put<double>(c.item_proxy_noise);
  w.put<double>(c.affinity_scale);
  w.put<double>(c.popularity_weight);
  w.put<double>(c.affinity_offset);
  w.put_doubles(c.head_offsets);
  for (const auto& row : c.head_noise) w.put_doubles(row);
  w.put<double>(c.patience_min);
  w.put<double>(c.patience_max);
  w.put<double>(c.watch_max);
  w.put<double>(c.watch_slope);
  w.put<double>(c.watch_shift);
  w.put<double>(c.watch_shape);
  w.put_doubles(c.interaction_offsets);
  w.put<double>(c.continue_bias);
  w.put<double>(c.continue_slope);
  w.put<std::uint32_t>(c.max_requests);
  w.put<std::uint32_t>(c.n_candidates);
  w.put<std::uint32_t>(c.list_length);
  w.put_doubles(c.reward_weights.w);
}

WorldConfig get_config(ByteReader& r) {
  WorldConfig c;
  c.n_users = r.get<std::uint32_t>();
  c.n_items = r.get<std::uint32_t>();
  c.latent_dim = r.get<std::uint32_t>();
  c.profile_noise = r.get<double>();
  c.item_proxy_noise = r.get<double>();
  c.affinity_scale = r.get<double>();
  c.popularity_weight = r.get<double>();
  c.affinity_offset = r.get<double>();
  r.get_doubles(c.head_offsets);
  for (auto& row : c.head_noise) r.get_doubles(row);
  c.patience_min = r.get<double>();
  c.patience_max = r.get<double>();
  c.watch_max = r.get<double>();
  c.watch_slope = r.get<double>();
  c.watch_shift = r.get<double>();
  c.watch_shape = r.get<double>();
  r.get_doubles(c.interaction_offsets);
  c.continue_bias = r.get<double>();
  c.continue_slope = r.get<double>();
  c.max_requests = r.get<std::uint32_t>();
  c.n_candidates = r.get<std::uint32_t>();
  c.list_length = r.get<std::uint32_t>();
  r.get_doubles(c.reward_weights.w);
  return c;
}

}  // namespace

void WorldConfig::validate() const {
  if (n_users == 0 || n_items == 0) throw std::invalid_argument("world: user and item counts must be positive");
  if (latent_dim == 0) throw std::invalid_argument("world: latent_dim must be positive");
  if (!(patience_min > 0.0) || patience_max > 1.0 || patience_min > patience_max) {
    throw std::invalid_argument("world: patience range must lie in (0, 1]");
  }
  for (const auto& row : head_noise) {
    for (double s : row) {
      if (!(s >= 0.0)) throw std::invalid_argument("world: head noise must be nonnegative");
    }
  }
  if (!(watch_max > 0.0) || !(watch_shape > 0.0)) throw std::invalid_argument("world: watch parameters must be positive");
  if (max_requests == 0) throw std::invalid_argument("world: max_requests must be positive");
  if (list_length == 0 || list_length > n_candidates) {
    throw std::invalid_argument("world: list_length must be in [1, n_candidates]");
  }
  if (list_length > n_items) throw std::invalid_argument("world: list_length exceeds the catalog size");
  reward_weights.validate();
}

StateLayout World::layout() const {
  return {config.latent_dim + 3, kCategories + 1 + config.latent_dim, 2};
}

World gen_world(std::uint64_t seed, std::uint32_t n_users, std::uint32_t n_items,
                const WorldConfig& config) {
  WorldConfig cfg = config;
  cfg.n_users = n_users;
  cfg.n_items = n_items;
  cfg.validate();

  World world;
  world.config = cfg;
  world.seed = seed;
  Rng rng(derive_seed(seed, {kTagWorld}));

  world.users.reserve(n_users);
  for (std::uint32_t u = 0; u < n_users; ++u) {
    SimUser user;
    user.id = u;
    user.latent = unit_vector(rng, cfg.latent_dim);
    user.visible_profile.resize(cfg.latent_dim);
    for (std::size_t d = 0; d < cfg.latent_dim; ++d) {
      user.visible_profile[d] = user.latent[d] + cfg.profile_noise * rng.normal();
    }
    user.patience = rng.uniform(cfg.patience_min, cfg.patience_max);
    world.users.push_back(std::move(user));
  }

  world.items.reserve(n_items);
  for (std::uint32_t i = 0; i < n_items; ++i) {
    SimItem item;
    item.id = i;
    item.category = i % kCategories;
    item.embedding = unit_vector(rng, cfg.latent_dim);
    item.visible_features.resize(cfg.latent_dim);
    for (std::size_t d = 0; d < cfg.latent_dim; ++d) {
      item.visible_features[d] = item.embedding[d] + cfg.item_proxy_noise * rng.normal();
    }
    item.popularity = rng.uniform();
    world.items.push_back(std::move(item));
  }
  return world;
}

double true_affinity(const World& world, const SimUser& user, const SimItem& item) {
  const auto& c = world.config;
  return c.affinity_scale * dot(user.latent, item.embedding) +
         c.popularity_weight * (item.popularity - 0.5) + c.affinity_offset;
}

double head_signal(const World& world, const SimUser& user, const SimItem& item, std::size_t head) {
  return true_affinity(world, user, item) + world.config.head_offsets.at(head);
}

PredictedScores mtl_surrogate(const World& world, const SimUser& user, const SimItem& item) {
  PredictedScores p;
  const auto& noise = world.config.head_noise.at(item.category);
  for (std::size_t h = 0; h < kHeads; ++h) {
    const double xi = hashed_normal(derive_seed(world.seed, {kTagHeadNoise, user.id, item.id, h}));
    const double logit = std::clamp(head_signal(world, user, item, h) + noise[h] * xi, -30.0, 30.0);
    p.scores[h] = sigmoid(logit);
  }
  return p;
}

namespace {

double mean_watch(const WorldConfig& c, double affinity) {
  return c.watch_max * sigmoid(c.watch_slope * affinity + c.watch_shift);
}

}  // namespace

BehaviorVector sample_behaviors(const World& world, const SimUser& user, const SimItem& item,
                                Rng& rng) {
  const auto& c = world.config;
  const double affinity = true_affinity(world, user, item);
  const double mean = mean_watch(c, affinity);
  const double watch = mean > 1e-300 ? rng.gamma(c.watch_shape, mean / c.watch_shape) : 0.0;
  const bool like = rng.bernoulli(sigmoid(affinity + c.interaction_offsets[0]));
  const bool share = rng.bernoulli(sigmoid(affinity + c.interaction_offsets[1]));
  const bool collect = rng.bernoulli(sigmoid(affinity + c.interaction_offsets[2]));
  return BehaviorVector::from_watch(watch, like, share, collect);
}

double expected_item_reward(const World& world, const SimUser& user, const SimItem& item) {
  const auto& c = world.config;
  const auto& w = c.reward_weights.w;
  const double affinity = true_affinity(world, user, item);
  const double mean = mean_watch(c, affinity);
  const double p_valid =
      mean > 1e-300 ? boost::math::gamma_q(c.watch_shape, kValidWatchSeconds * c.watch_shape / mean) : 0.0;
  return w[0] * mean + w[1] * p_valid + w[2] * sigmoid(affinity + c.interaction_offsets[0]) +
         w[3] * sigmoid(affinity + c.interaction_offsets[1]) +
         w[4] * sigmoid(affinity + c.interaction_offsets[2]);
}

double continuation_probability(const World& world, const SimUser& user, double request_reward,
                                std::uint32_t requests_served) {
  if (requests_served >= world.config.max_requests) return 0.0;
  return sigmoid(world.config.continue_bias + world.config.continue_slope * request_reward) *
         user.patience;
}

bool step_session(const World& world, const SimUser& user, double request_reward,
                  std::uint32_t requests_served, Rng& rng) {
  const double p = continuation_probability(world, user, request_reward, requests_served);
  return rng.uniform() < p;
}

EnhancedState build_state(const World& world, const SimUser& user, const SimItem& item,
                          const SessionHistory& history, std::uint32_t round_id) {
  const auto& c = world.config;
  EnhancedState s;
  s.user_features = user.visible_profile;
  s.user_features.push_back(static_cast<double>(history.requests_served) / c.max_requests);
  s.user_features.push_back(history.items_seen ? history.reward_sum / history.items_seen / 5.0 : 0.0);
  s.user_features.push_back(
      history.items_seen ? static_cast<double>(history.valid_consumptions) / history.items_seen : 0.0);

  s.item_features.assign(kCategories, 0.0);
  s.item_features[item.category] = 1.0;
  s.item_features.push_back(item.popularity);
  s.item_features.insert(s.item_features.end(), item.visible_features.begin(),
                         item.visible_features.end());

  s.mtl_scores = mtl_surrogate(world, user, item);
  s.context = {static_cast<double>(history.requests_served) / c.max_requests,
               0.1 * static_cast<double>(round_id)};
  return s;
}

void ConstantPolicy::act_request(const RequestState& request, std::span<FusionAction> actions,
                                 std::span<FusionAction> baselines, Rng&) const {
  for (std::size_t c = 0; c < request.sub_states.size(); ++c) {
    actions[c] = action_;
    baselines[c] = action_;
  }
}

std::vector<std::uint32_t> sample_candidates(const World& world, std::uint64_t session_seed,
                                             std::uint32_t request_index) {
  Rng rng(derive_seed(session_seed, {kTagCandidates, request_index}));
  const auto n_items = static_cast<std::uint32_t>(world.items.size());
  std::vector<std::uint32_t> pool(n_items);
  std::iota(pool.begin(), pool.end(), 0u);
  // Small catalogs offer every item.
  const std::uint32_t n = std::min(world.config.n_candidates, n_items);
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto pick = k + static_cast<std::uint32_t>(rng.below(n_items - k));
    std::swap(pool[k], pool[pick]);
  }
  pool.resize(n);
  return pool;
}

namespace {

void append_action(std::vector<double>& out, const FusionAction& a) {
  out.insert(out.end(), a.a.begin(), a.a.end());
}

}  // namespace

SessionTrace rollout_session(const FusionPolicy& policy, const World& world, const SimUser& user,
                             std::uint64_t session_seed, std::uint64_t session_id,
                             std::uint32_t round_id) {
  const auto& cfg = world.config;
  const StateLayout layout = world.layout();
  const auto dim = static_cast<std::uint32_t>(layout.total());

  SessionTrace trace;
  SessionHistory history;
  std::vector<FusionAction> actions(cfg.n_candidates);
  std::vector<FusionAction> baselines(cfg.n_candidates);
  std::vector<double> rewards(cfg.list_length);

  for (std::uint32_t request_index = 0;; ++request_index) {
    RequestState request;
    request.user_id = user.id;
    request.request_index = request_index;
    const auto candidates = sample_candidates(world, session_seed, request_index);
    request.sub_states.reserve(candidates.size());
    for (std::uint32_t item_id : candidates) {
      request.sub_states.push_back(build_state(world, user, world.items[item_id], history, round_id));
    }

    Rng policy_rng(derive_seed(session_seed, {kTagPolicy, request_index}));
    const std::size_t n = candidates.size();
    policy.act_request(request, std::span(actions).first(n), std::span(baselines).first(n), policy_rng);
    const auto shown = rank_candidates(request, std::span(actions).first(n), cfg.list_length);

    Transition t;
    t.session_id = session_id;
    t.user_id = user.id;
    t.round_id = round_id;
    t.request_index = request_index;
    t.state_dim = dim;
    t.states.resize(std::size_t{cfg.list_length} * dim);
    for (std::size_t j = 0; j < shown.size(); ++j) {
      const std::size_t c = shown[j];
      request.sub_states[c].flatten_into(std::span(t.states).subspan(j * dim, dim));
      append_action(t.actions, actions[c]);
      append_action(t.baseline_actions, baselines[c]);
      const SimItem& item = world.items[candidates[c]];
      Rng behavior_rng(derive_seed(session_seed, {kTagBehavior, request_index, item.id}));
      const BehaviorVector v = sample_behaviors(world, user, item, behavior_rng);
      rewards[j] = item_reward(v, cfg.reward_weights);
      t.rewards.push_back(rewards[j]);
      t.labels.push_back(static_cast<std::uint8_t>(consumption_label(v)));
      history.valid_consumptions += v.valid_consumption;
      trace.valid_consumptions += v.valid_consumption;
    }
    const double r = request_reward(rewards);
    history.reward_sum += r;
    history.items_seen += cfg.list_length;
    history.requests_served = request_index + 1;
    trace.total_reward += r;

    if (!trace.transitions.empty()) {
      Transition& prev = trace.transitions.back();
      prev.terminal = false;
      prev.next_states = t.states;
      prev.next_baseline_actions = t.baseline_actions;
    }
    trace.transitions.push_back(std::move(t));

    Rng continue_rng(derive_seed(session_seed, {kTagContinue, request_index}));
    if (!step_session(world, user, r, history.requests_served, continue_rng)) break;
  }
  trace.session_length = static_cast<std::uint32_t>(trace.transitions.size());
  return trace;
}

std::vector<std::uint8_t> World::serialize() const {
  ByteWriter w;
  w.put_magic(kWorldMagic);
  w.put<std::uint32_t>(kWorldVersion);
  w.put<std::uint64_t>(seed);
  put_config(w, config);
  for (const auto& u : users) {
    w.put<std::uint64_t>(u.id);
    w.put_doubles(u.latent);
    w.put_doubles(u.visible_profile);
    w.put<double>(u.patience);
  }
  for (const auto& i : items) {
    w.put<std::uint64_t>(i.id);
    w.put<std::uint32_t>(i.category);
    w.put_doubles(i.embedding);
    w.put_doubles(i.visible_features);
    w.put<double>(i.popularity);
  }
  return std::move(w).finish();
}

World World::deserialize(std::span<const std::uint8_t> bytes) {
  auto r = ByteReader::checked(bytes, "world checkpoint");
  r.expect_magic(kWorldMagic);
  if (const auto version = r.get<std::uint32_t>(); version != kWorldVersion) {
    throw FormatError("world checkpoint: unsupported version " + std::to_string(version));
  }
  World world;
  world.seed = r.get<std::uint64_t>();
  world.config = get_config(r);
  world.config.validate();
  const std::size_t d = world.config.latent_dim;
  world.users.resize(world.config.n_users);
  for (auto& u : world.users) {
    u.id = r.get<std::uint64_t>();
    u.latent.resize(d);
    u.visible_profile.resize(d);
    r.get_doubles(u.latent);
    r.get_doubles(u.visible_profile);
    u.patience = r.get<double>();
  }
  world.items.resize(world.config.n_items);
  for (auto& i : world.items) {
    i.id = r.get<std::uint64_t>();
    i.category = r.get<std::uint32_t>();
    i.embedding.resize(d);
    i.visible_features.resize(d);
    r.get_doubles(i.embedding);
    r.get_doubles(i.visible_features);
    i.popularity = r.get<double>();
  }
  if (!r.at_end()) throw FormatError("world checkpoint: trailing bytes");
  return world;
}

void World::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

World World::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

bool World::operator==(const World& other) const { return serialize() == other.serialize(); }

}  // namespace mtf
