#include "mtf/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "mtf/binary_io.hpp"

namespace mtf {

namespace {

enum class KeyType { kInt, kReal, kBool, kWidths, kMode };

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::kInt: return "non-negative integer";
    case KeyType::kReal: return "real number";
    case KeyType::kBool: return "boolean (true/false)";
    case KeyType::kWidths: return "comma-separated positive integers";
    case KeyType::kMode: return "one of target_subtract, literal";
  }
  return "?";
}

struct Value {
  std::uint64_t i = 0;
  double r = 0.0;
  bool b = false;
  std::vector<std::size_t> widths;
  CriticPenaltyMode mode = CriticPenaltyMode::kTargetSubtract;
};

struct Key {
  std::string name;
  KeyType type;
  std::function<Value(const RunConfig&)> get;
  std::function<void(RunConfig&, const Value&)> set;
};

std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool parse_u64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_value(KeyType type, const std::string& text, Value& v) {
  switch (type) {
    case KeyType::kInt:
      return parse_u64(text, v.i);
    case KeyType::kReal: {
      if (text.empty()) return false;
      char* end = nullptr;
      v.r = std::strtod(text.c_str(), &end);
      return end == text.c_str() + text.size() && std::isfinite(v.r);
    }
    case KeyType::kBool:
      if (text == "true" || text == "1") {
        v.b = true;
        return true;
      }
      if (text == "false" || text == "0") {
        v.b = false;
        return true;
      }
      return false;
    case KeyType::kWidths: {
      v.widths.clear();
      std::stringstream ss(text);
      std::string part;
      while (std::getline(ss, part, ',')) {
        std::uint64_t w = 0;
        if (!parse_u64(trim(part), w) || w == 0) return false;
        v.widths.push_back(static_cast<std::size_t>(w));
      }
      return !v.widths.empty();
    }
    case KeyType::kMode:
      if (text == "target_subtract") {
        v.mode = CriticPenaltyMode::kTargetSubtract;
        return true;
      }
      if (text == "literal") {
        v.mode = CriticPenaltyMode::kLiteral;
        return true;
      }
      return false;
  }
  return false;
}

std::string format_value(KeyType type, const Value& v) {
  switch (type) {
    case KeyType::kInt: return std::to_string(v.i);
    case KeyType::kReal: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v.r);
      return buf;
    }
    case KeyType::kBool: return v.b ? "true" : "false";
    case KeyType::kWidths: {
      std::string s;
      for (std::size_t k = 0; k < v.widths.size(); ++k) s += (k ? "," : "") + std::to_string(v.widths[k]);
      return s;
    }
    case KeyType::kMode: return v.mode == CriticPenaltyMode::kLiteral ? "literal" : "target_subtract";
  }
  return "";
}

template <typename T>
Key ikey(std::string name, std::function<T&(RunConfig&)> ref) {
  return {std::move(name), KeyType::kInt,
          [ref](const RunConfig& c) {
            Value v;
            v.i = static_cast<std::uint64_t>(ref(const_cast<RunConfig&>(c)));
            return v;
          },
          [ref](RunConfig& c, const Value& v) {
            if (v.i > std::numeric_limits<T>::max()) throw ConfigError("value out of range");
            ref(c) = static_cast<T>(v.i);
          }};
}

Key rkey(std::string name, std::function<double&(RunConfig&)> ref) {
  return {std::move(name), KeyType::kReal,
          [ref](const RunConfig& c) {
            Value v;
            v.r = ref(const_cast<RunConfig&>(c));
            return v;
          },
          [ref](RunConfig& c, const Value& v) { ref(c) = v.r; }};
}

Key bkey(std::string name, std::function<bool&(RunConfig&)> ref) {
  return {std::move(name), KeyType::kBool,
          [ref](const RunConfig& c) {
            Value v;
            v.b = ref(const_cast<RunConfig&>(c));
            return v;
          },
          [ref](RunConfig& c, const Value& v) { ref(c) = v.b; }};
}

Key wkey(std::string name, std::function<std::vector<std::size_t>&(RunConfig&)> ref) {
  return {std::move(name), KeyType::kWidths,
          [ref](const RunConfig& c) {
            Value v;
            v.widths = ref(const_cast<RunConfig&>(c));
            return v;
          },
          [ref](RunConfig& c, const Value& v) { ref(c) = v.widths; }};
}

// Scalar exploration bounds: one value applied to every action dimension.
Key bound_key(std::string name, bool upper) {
  return {std::move(name), KeyType::kReal,
          [upper](const RunConfig& c) {
            Value v;
            v.r = upper ? c.train().bounds.upper[0] : c.train().bounds.lower[0];
            return v;
          },
          [upper](RunConfig& c, const Value& v) {
            auto& arr = upper ? c.train().bounds.upper : c.train().bounds.lower;
            arr.fill(v.r);
          }};
}

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    using C = RunConfig;
    // Simulator.
    k.push_back(ikey<std::uint32_t>("n_users", [](C& c) -> std::uint32_t& { return c.world.n_users; }));
    k.push_back(ikey<std::uint32_t>("n_items", [](C& c) -> std::uint32_t& { return c.world.n_items; }));
    k.push_back(ikey<std::uint32_t>("latent_dim", [](C& c) -> std::uint32_t& { return c.world.latent_dim; }));
    k.push_back(ikey<std::uint32_t>("n_candidates", [](C& c) -> std::uint32_t& { return c.world.n_candidates; }));
    k.push_back(ikey<std::uint32_t>("list_length", [](C& c) -> std::uint32_t& { return c.world.list_length; }));
    k.push_back(ikey<std::uint32_t>("max_requests", [](C& c) -> std::uint32_t& { return c.world.max_requests; }));
    k.push_back(rkey("profile_noise", [](C& c) -> double& { return c.world.profile_noise; }));
    k.push_back(rkey("item_proxy_noise", [](C& c) -> double& { return c.world.item_proxy_noise; }));
    k.push_back(rkey("affinity_scale", [](C& c) -> double& { return c.world.affinity_scale; }));
    k.push_back(rkey("popularity_weight", [](C& c) -> double& { return c.world.popularity_weight; }));
    k.push_back(rkey("affinity_offset", [](C& c) -> double& { return c.world.affinity_offset; }));
    k.push_back(rkey("patience_min", [](C& c) -> double& { return c.world.patience_min; }));
    k.push_back(rkey("patience_max", [](C& c) -> double& { return c.world.patience_max; }));
    k.push_back(rkey("watch_max", [](C& c) -> double& { return c.world.watch_max; }));
    k.push_back(rkey("watch_slope", [](C& c) -> double& { return c.world.watch_slope; }));
    k.push_back(rkey("watch_shift", [](C& c) -> double& { return c.world.watch_shift; }));
    k.push_back(rkey("watch_shape", [](C& c) -> double& { return c.world.watch_shape; }));
    k.push_back(rkey("continue_bias", [](C& c) -> double& { return c.world.continue_bias; }));
    k.push_back(rkey("continue_slope", [](C& c) -> double& { return c.world.continue_slope; }));
    k.push_back(rkey("reward_weight_watch", [](C& c) -> double& { return c.world.reward_weights.w[0]; }));
    k.push_back(rkey("reward_weight_valid", [](C& c) -> double& { return c.world.reward_weights.w[1]; }));
    k.push_back(rkey("reward_weight_like", [](C& c) -> double& { return c.world.reward_weights.w[2]; }));
    k.push_back(rkey("reward_weight_share", [](C& c) -> double& { return c.world.reward_weights.w[3]; }));
    k.push_back(rkey("reward_weight_collect", [](C& c) -> double& { return c.world.reward_weights.w[4]; }));
    // Exploration and objectives.
    k.push_back(bound_key("explore_lower", false));
    k.push_back(bound_key("explore_upper", true));
    k.push_back(rkey("eta", [](C& c) -> double& { return c.train().penalty.eta; }));
    k.push_back(rkey("lambda", [](C& c) -> double& { return c.train().penalty.lambda; }));
    k.push_back(rkey("delta", [](C& c) -> double& { return c.train().penalty.delta; }));
    k.push_back(rkey("beta", [](C& c) -> double& { return c.train().penalty.beta; }));
    k.push_back(rkey("gamma", [](C& c) -> double& { return c.train().penalty.gamma; }));
    k.push_back({"critic_penalty_mode", KeyType::kMode,
                 [](const C& c) {
                   Value v;
                   v.mode = c.train().critic_penalty_mode;
                   return v;
                 },
                 [](C& c, const Value& v) { c.train().critic_penalty_mode = v.mode; }});
    // Networks and optimization.
    k.push_back({"action_dim", KeyType::kInt,
                 [](const C&) {
                   Value v;
                   v.i = kActionDim;
                   return v;
                 },
                 [](C&, const Value&) {}});
    k.push_back(wkey("actor_hidden", [](C& c) -> std::vector<std::size_t>& { return c.train().shapes.actor_hidden; }));
    k.push_back(wkey("critic_hidden", [](C& c) -> std::vector<std::size_t>& { return c.train().shapes.critic_hidden; }));
    k.push_back(ikey<std::size_t>("critic_count", [](C& c) -> std::size_t& { return c.train().critic_count; }));
    k.push_back(ikey<std::size_t>("batch_size", [](C& c) -> std::size_t& { return c.train().batch_size; }));
    k.push_back(ikey<std::size_t>("steps", [](C& c) -> std::size_t& { return c.train().steps; }));
    k.push_back(rkey("actor_lr", [](C& c) -> double& { return c.train().actor_adam.step_size; }));
    k.push_back(rkey("critic_lr", [](C& c) -> double& { return c.train().critic_adam.step_size; }));
    k.push_back({"adam_beta1", KeyType::kReal,
                 [](const C& c) {
                   Value v;
                   v.r = c.train().actor_adam.beta1;
                   return v;
                 },
                 [](C& c, const Value& v) { c.train().actor_adam.beta1 = c.train().critic_adam.beta1 = v.r; }});
    k.push_back({"adam_beta2", KeyType::kReal,
                 [](const C& c) {
                   Value v;
                   v.r = c.train().actor_adam.beta2;
                   return v;
                 },
                 [](C& c, const Value& v) { c.train().actor_adam.beta2 = c.train().critic_adam.beta2 = v.r; }});
    k.push_back({"adam_epsilon", KeyType::kReal,
                 [](const C& c) {
                   Value v;
                   v.r = c.train().actor_adam.epsilon;
                   return v;
                 },
                 [](C& c, const Value& v) { c.train().actor_adam.epsilon = c.train().critic_adam.epsilon = v.r; }});
    k.push_back(rkey("soft_update_rate", [](C& c) -> double& { return c.train().soft_update.rate; }));
    k.push_back(ikey<std::uint32_t>("soft_update_delay", [](C& c) -> std::uint32_t& { return c.train().soft_update.delay; }));
    k.push_back(bkey("user_state_only", [](C& c) -> bool& { return c.train().user_state_only; }));
    k.push_back(bkey("union_rounds", [](C& c) -> bool& { return c.train().union_rounds; }));
    k.push_back(bkey("warm_start", [](C& c) -> bool& { return c.train().warm_start; }));
    k.push_back(ikey<std::size_t>("metrics_every", [](C& c) -> std::size_t& { return c.train().metrics_every; }));
    // Progressive training and evaluation.
    k.push_back(ikey<std::uint32_t>("rounds", [](C& c) -> std::uint32_t& { return c.ptm.rounds; }));
    k.push_back(ikey<std::size_t>("sessions_per_round", [](C& c) -> std::size_t& { return c.ptm.sessions_per_round; }));
    k.push_back(ikey<std::size_t>("eval_sessions", [](C& c) -> std::size_t& { return c.ptm.eval_sessions; }));
    k.push_back(ikey<std::size_t>("heldout_sessions", [](C& c) -> std::size_t& { return c.ptm.heldout_sessions; }));
    k.push_back(ikey<std::size_t>("compare_batches", [](C& c) -> std::size_t& { return c.compare_batches; }));
    k.push_back(ikey<std::size_t>("compare_sessions_per_batch",
                                  [](C& c) -> std::size_t& { return c.compare_sessions_per_batch; }));
    return k;
  }();
  return keys;
}

const Key* find_key(std::string_view name) {
  for (const auto& k : schema()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void assign(RunConfig& config, const Key& key, const std::string& text, const std::string& where) {
  Value v;
  if (!parse_value(key.type, text, v)) {
    throw ConfigError(where + ": key '" + key.name + "' expects " + type_name(key.type) + ", found '" + text + "'");
  }
  if (key.name == "action_dim") {
    if (v.i != kActionDim) {
      throw ConfigError(where + ": key 'action_dim' is fixed at " + std::to_string(kActionDim) + ", found '" +
                        text + "'");
    }
    return;
  }
  try {
    key.set(config, v);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": key '" + key.name + "': " + e.what() + ", found '" + text + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    world.validate();
    train().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (world.list_length != kListLength) {
    throw ConfigError("invalid config: list_length must be " + std::to_string(kListLength));
  }
  if (ptm.rounds < 1) throw ConfigError("invalid config: rounds must be >= 1");
  if (compare_batches < 2) throw ConfigError("invalid config: compare_batches must be >= 2");
  if (compare_sessions_per_batch < 1) throw ConfigError("invalid config: compare_sessions_per_batch must be >= 1");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : schema()) out += k.name + " = " + format_value(k.type, k.get(*this)) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : schema()) out.push_back(k.name);
  return out;
}

RunConfig parse_config(std::string_view text, std::string_view origin) {
  RunConfig config;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', found '" + body + "'");
    const std::string name = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const Key* key = find_key(name);
    if (!key) throw ConfigError(where + ": unknown key '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError(where + ": duplicate key '" + name + "'");
    assign(config, *key, value, where);
  }
  return config;
}

void apply_env_overrides(RunConfig& config) {
  for (const auto& k : schema()) {
    std::string var = "MTF_";
    for (char ch : k.name) var += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const char* v = std::getenv(var.c_str())) assign(config, k, trim(v), "environment " + var);
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig config;
  if (path != "default") {
    std::string text;
    try {
      text = read_text(path);
    } catch (const std::exception& e) {
      throw ConfigFileError("cannot read config file '" + path + "': " + e.what());
    }
    config = parse_config(text, path);
  }
  apply_env_overrides(config);
  config.validate();
  return config;
}

}  // namespace mtf
