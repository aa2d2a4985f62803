#include "mtf/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <map>
#include <iostream>
#include <optional>
#include <sstream>

#include "mtf/binary_io.hpp"
#include "mtf/config.hpp"
#include "mtf/eval.hpp"
#include "mtf/trainer.hpp"

namespace mtf {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config = "default";
  std::uint64_t seed = 0;
  std::string out;
};

struct Extra {
  std::string world;
  std::string data;
  std::string policy;
  std::string policy_b;
  std::string heldout;
  std::optional<std::uint32_t> round;
};

void write_run_metadata(const fs::path& dir, const RunConfig& config, const std::string& command,
                        std::uint64_t seed) {
  fs::create_directories(dir);
  write_text(dir / "config.txt", config.serialize());
  write_text(dir / "version.txt", std::string(kToolVersion) + "\ncommand=" + command + "\nseed=" +
                                      std::to_string(seed) + "\n");
}

StateLayout layout_for(const WorldConfig& cfg) {
  World w;
  w.config = cfg;
  return w.layout();
}

World world_for(const RunConfig& config, const Common& common, const Extra& extra) {
  if (!extra.world.empty()) return World::load(extra.world);
  return gen_world(common.seed, config.world.n_users, config.world.n_items, config.world);
}

PolicyCheckpoint load_checkpoint(const std::string& path) {
  PolicyCheckpoint ckpt = PolicyCheckpoint::deserialize(read_file(path));
  if (!ckpt.learner) throw FormatError("policy checkpoint '" + path + "' holds no networks");
  return ckpt;
}

std::string collect_text(const CollectStats& s, std::uint32_t round_id) {
  std::ostringstream o;
  o << "round=" << round_id << "\nsessions=" << s.sessions << "\nrequests=" << s.requests << "\n";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", s.total_reward);
  o << "total_reward=" << buf << "\n";
  return o.str();
}

std::string metrics_text(const std::vector<StepMetrics>& metrics, std::uint32_t round_id) {
  std::string s;
  for (const auto& m : metrics) s += m.to_line(round_id) + "\n";
  return s;
}

void save_checkpoint(const fs::path& path, std::uint32_t round_id, const TrainConfig& train, const Learner& learner) {
  PolicyCheckpoint ckpt;
  ckpt.round_id = round_id;
  ckpt.bounds = train.bounds;
  ckpt.penalty = train.penalty;
  ckpt.critic_penalty_mode = train.critic_penalty_mode;
  ckpt.learner = learner;
  write_file(path, ckpt.serialize());
}

int run_env_gen(const RunConfig& config, const Common& c, std::ostream& out) {
  const World world = gen_world(c.seed, config.world.n_users, config.world.n_items, config.world);
  const fs::path dir(c.out);
  write_run_metadata(dir, config, "env-gen", c.seed);
  const auto bytes = world.serialize();
  write_file(dir / "world.bin", bytes);
  std::ostringstream s;
  s << "users=" << world.users.size() << "\nitems=" << world.items.size()
    << "\nstate_dim=" << world.layout().total() << "\ncrc32=" << crc32_of(bytes) << "\n";
  write_text(dir / "summary.txt", s.str());
  out << "wrote " << (dir / "world.bin").string() << "\n";
  return kExitOk;
}

int run_explore(const RunConfig& config, const Common& c, const Extra& e, std::ostream& out) {
  const World world = world_for(config, c, e);
  const ConstantPolicy midpoint(FusionAction::midpoint());
  std::optional<PolicyCheckpoint> ckpt;
  std::optional<ActorFusionPolicy> actor_policy;
  std::uint32_t round_id = 0;
  if (!e.policy.empty()) {
    ckpt = load_checkpoint(e.policy);
    if (ckpt->learner->actor.layout() != world.layout()) throw FormatError("policy does not match the world layout");
    actor_policy.emplace(ckpt->learner->actor);
    round_id = ckpt->round_id + 1;
  }
  if (e.round) round_id = *e.round;
  const FusionPolicy& baseline = actor_policy ? static_cast<const FusionPolicy&>(*actor_policy) : midpoint;

  CollectStats stats;
  ReplayDataset data;
  data.append(collect_round(world, baseline, config.train().bounds, config.ptm.sessions_per_round, c.seed,
                            round_id, &stats));
  const fs::path dir(c.out);
  write_run_metadata(dir, config, "explore", c.seed);
  data.save(dir / "transitions.log");
  write_text(dir / "collect.txt", collect_text(stats, round_id));
  out << "collected " << data.size() << " transitions for round " << round_id << "\n";
  return kExitOk;
}

int run_train(const RunConfig& config, const Common& c, const Extra& e, std::ostream& out) {
  if (e.data.empty()) throw CLI::ValidationError("train: --data <transitions.log> is required");
  const ReplayDataset data = ReplayDataset::load(e.data);
  if (data.empty()) throw TrainingError("train: transition log '" + e.data + "' is empty");
  TrainConfig train = config.train();
  train.seed = c.seed;
  const std::uint32_t round_id = e.round ? *e.round : data.round_count() - 1;
  std::optional<Learner> start;
  if (!e.policy.empty()) start = std::move(*load_checkpoint(e.policy).learner);
  const TrainResult result = train_round(data, layout_for(config.world), train, round_id, std::move(start));

  const fs::path dir(c.out);
  write_run_metadata(dir, config, "train", c.seed);
  save_checkpoint(dir / "policy.ckpt", round_id, train, result.learner);
  write_text(dir / "metrics.txt", metrics_text(result.metrics, round_id));
  out << "trained round " << round_id << " on " << data.size() << " records\n";
  return kExitOk;
}

int run_ptm(const RunConfig& config, const Common& c, std::ostream& out) {
  const World world = gen_world(c.seed, config.world.n_users, config.world.n_items, config.world);
  const fs::path dir(c.out);
  write_run_metadata(dir, config, "ptm", c.seed);
  write_file(dir / "world.bin", world.serialize());
  ReplayDataset heldout;
  heldout.append(collect_heldout(world, config.train(), config.ptm.heldout_sessions, c.seed));
  heldout.save(dir / "heldout.log");

  std::string summary;
  ptm_run(world, config.ptm, c.seed, [&](const RoundArtifact& art) {
    const fs::path rd = dir / ("round_" + std::to_string(art.round_id));
    fs::create_directories(rd);
    write_file(rd / "policy.ckpt", art.policy_checkpoint);
    write_text(rd / "report.txt", art.report.to_text());
    write_text(rd / "metrics.txt", metrics_text(art.metrics, art.round_id));
    write_text(rd / "collect.txt", collect_text(art.collect, art.round_id));
    char buf[80];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", art.report.mean_session_reward,
                  art.report.session_reward_stderr, art.report.gauc.overall);
    summary += "round=" + std::to_string(art.round_id) + " reward_mean_stderr_gauc=" + buf + "\n";
    write_text(dir / "summary.txt", summary);
    out << "round " << art.round_id << ": mean session reward " << art.report.mean_session_reward << "\n";
  });
  return kExitOk;
}

int run_evaluate(const RunConfig& config, const Common& c, const Extra& e, std::ostream& out) {
  if (e.policy.empty()) throw CLI::ValidationError("evaluate: --policy <checkpoint> is required");
  const World world = world_for(config, c, e);
  const PolicyCheckpoint ckpt = load_checkpoint(e.policy);
  std::vector<Transition> heldout;
  if (!e.heldout.empty()) {
    heldout = ReplayDataset::load(e.heldout).records();
  } else {
    heldout = collect_heldout(world, config.train(), config.ptm.heldout_sessions, c.seed);
  }
  const EvalReport report = evaluate_policy(world, ckpt.learner->actor, heldout, config.ptm.eval_sessions,
                                            ptm_eval_seed(c.seed), ckpt.round_id);
  const fs::path dir(c.out);
  write_run_metadata(dir, config, "evaluate", c.seed);
  write_text(dir / "report.txt", report.to_text());
  out << report.to_text();
  return kExitOk;
}

int run_compare(const RunConfig& config, const Common& c, const Extra& e, std::ostream& out) {
  if (e.policy.empty()) throw CLI::ValidationError("compare: --policy <checkpoint> is required");
  const World world = world_for(config, c, e);
  const PolicyCheckpoint a = load_checkpoint(e.policy);
  const ActorFusionPolicy policy_a(a.learner->actor);
  const ConstantPolicy midpoint(FusionAction::midpoint());
  std::optional<PolicyCheckpoint> b;
  std::optional<ActorFusionPolicy> policy_b;
  if (!e.policy_b.empty()) {
    b = load_checkpoint(e.policy_b);
    policy_b.emplace(b->learner->actor);
  }
  const FusionPolicy& other = policy_b ? static_cast<const FusionPolicy&>(*policy_b) : midpoint;
  const ComparisonReport report =
      compare_policies(world, policy_a, other, config.compare_batches, config.compare_sessions_per_batch, c.seed);
  const fs::path dir(c.out);
  write_run_metadata(dir, config, "compare", c.seed);
  write_text(dir / "compare.txt", report.to_text());
  out << report.to_text();
  return kExitOk;
}

const std::vector<std::string> kCommands = {"env-gen", "explore", "train", "ptm", "evaluate", "compare"};

const std::map<std::string, std::string> kCommandHelp = {
    {"env-gen", "generate a simulated world"},
    {"explore", "collect one round of exploration data"},
    {"train", "train actor and critics on a transition log"},
    {"ptm", "run every progressive-training round end to end"},
    {"evaluate", "session reward and weighted GAUC for a checkpoint"},
    {"compare", "matched-seed comparison of two policies"},
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << "error: missing command; expected one of env-gen, explore, train, ptm, evaluate, compare\n";
    return kExitUsage;
  }
  if (args[0] != "--help" && args[0] != "-h" &&
      std::find(kCommands.begin(), kCommands.end(), args[0]) == kCommands.end()) {
    err << "error: unknown command '" << args[0] << "'\n";
    return kExitUsage;
  }

  CLI::App app{"Enhanced-state multi-task fusion toolkit", "mtf"};
  app.require_subcommand(1);
  Common common;
  Extra extra;
  std::uint32_t round_value = 0;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : kCommands) {
    CLI::App* sub = app.add_subcommand(name, kCommandHelp.at(name));
    sub->add_option("--config", common.config, "config file path, or 'default'")->required();
    sub->add_option("--seed", common.seed, "run seed");
    sub->add_option("--out", common.out, "output directory")->required();
    if (name != "env-gen" && name != "ptm") sub->add_option("--world", extra.world, "world.bin from env-gen");
    if (name == "train") sub->add_option("--data", extra.data, "transition log")->required();
    if (name == "explore" || name == "train" || name == "evaluate" || name == "compare") {
      sub->add_option("--policy", extra.policy, "policy checkpoint");
    }
    if (name == "explore" || name == "train") sub->add_option("--round", round_value, "round id");
    if (name == "evaluate") sub->add_option("--heldout", extra.heldout, "held-out transition log");
    if (name == "compare") sub->add_option("--policy-b", extra.policy_b, "second checkpoint (default: midpoint)");
    subs[name] = sub;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  for (const auto& [name, sub] : subs) {
    if (auto* opt = sub->get_option_no_throw("--round"); opt && opt->count() > 0) extra.round = round_value;
  }

  const std::string& command = args[0];
  try {
    const RunConfig config = load_config(common.config);
    if (command == "env-gen") return run_env_gen(config, common, out);
    if (command == "explore") return run_explore(config, common, extra, out);
    if (command == "train") return run_train(config, common, extra, out);
    if (command == "ptm") return run_ptm(config, common, out);
    if (command == "evaluate") return run_evaluate(config, common, extra, out);
    return run_compare(config, common, extra, out);
  } catch (const ConfigFileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigFile;
  } catch (const ConfigError& e) {
    err << "error: config schema: " << e.what() << "\n";
    return kExitConfigSchema;
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const TrainingError& e) {
    err << "error: training: " << e.what() << "\n";
    return kExitTraining;
  } catch (const std::exception& e) {
    err << "error: " << command << ": " << e.what() << "\n";
    return kExitFailure;
  }
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace mtf
