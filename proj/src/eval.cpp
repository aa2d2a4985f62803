#include "mtf/eval.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mtf/policy.hpp"
#include "mtf/trainer.hpp"

namespace mtf {

namespace {

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::vector<double> normalize_scores(std::span<const double> raw) {
  for (double x : raw) {
    if (!std::isfinite(x)) throw std::invalid_argument("normalize_scores: non-finite score");
  }
  std::vector<double> out(raw.size(), 0.5);
  if (raw.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - lo) / (hi - lo);
  return out;
}

std::optional<double> weighted_group_auc(std::span<const EvalSample> group) {
  std::vector<std::size_t> order(group.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return group[x].score < group[y].score; });

  double pos_total = 0.0;
  double neg_total = 0.0;
  double numerator = 0.0;
  double neg_below = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t k = i;
    double pos_tie = 0.0;
    double neg_tie = 0.0;
    while (k < order.size() && group[order[k]].score == group[order[i]].score) {
      const EvalSample& s = group[order[k]];
      (s.label ? pos_tie : neg_tie) += s.weight;
      ++k;
    }
    numerator += pos_tie * neg_below + 0.5 * pos_tie * neg_tie;
    neg_below += neg_tie;
    pos_total += pos_tie;
    neg_total += neg_tie;
    i = k;
  }
  if (pos_total == 0.0 || neg_total == 0.0) return std::nullopt;
  return numerator / (pos_total * neg_total);
}

GaucReport weighted_gauc(std::span<const EvalSample> samples) {
  std::map<std::uint64_t, std::vector<EvalSample>> groups;
  for (const auto& s : samples) groups[s.group].push_back(s);

  GaucReport report;
  report.sample_count = samples.size();
  double weighted_sum = 0.0;
  double weight_total = 0.0;
  for (const auto& [id, members] : groups) {
    const auto auc = weighted_group_auc(members);
    if (!auc) {
      ++report.excluded_groups;
      continue;
    }
    double w = 0.0;
    for (const auto& s : members) w += s.weight;
    report.group_ids.push_back(id);
    report.group_aucs.push_back(*auc);
    report.group_weights.push_back(w);
    weighted_sum += w * *auc;
    weight_total += w;
  }
  if (report.group_ids.empty()) throw std::invalid_argument("weighted_gauc: no group has both labels");
  report.overall = weighted_sum / weight_total;
  return report;
}

std::string GaucReport::to_text() const {
  std::ostringstream out;
  out << "weighted_gauc=" << fmt_double(overall) << '\n'
      << "sample_count=" << sample_count << '\n'
      << "included_groups=" << group_ids.size() << '\n'
      << "excluded_groups=" << excluded_groups << '\n';
  for (std::size_t g = 0; g < group_ids.size(); ++g) {
    out << "group id=" << group_ids[g] << " auc=" << fmt_double(group_aucs[g])
        << " weight=" << fmt_double(group_weights[g]) << '\n';
  }
  return out.str();
}

std::vector<EvalSample> build_eval_samples(std::span<const Transition> data, const ActorPolicy& actor) {
  const std::size_t dim = actor.layout().total();
  const std::size_t mtl = actor.layout().mtl_offset();
  std::size_t n = 0;
  for (const auto& t : data) n += t.list_length();

  Eigen::MatrixXd states(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  std::vector<EvalSample> samples;
  samples.reserve(n);
  for (const auto& t : data) {
    if (t.state_dim != dim) throw std::invalid_argument("build_eval_samples: state width mismatch");
    for (std::size_t j = 0; j < t.list_length(); ++j) {
      const auto col = static_cast<Eigen::Index>(samples.size());
      states.col(col) = Eigen::Map<const Eigen::VectorXd>(t.states.data() + j * dim, static_cast<Eigen::Index>(dim));
      EvalSample s;
      s.group = t.user_id;
      s.label = t.labels[j];
      s.weight = t.rewards[j] + 1.0;
      samples.push_back(s);
    }
  }
  // Masked actors see identical inputs for every item of a request, so the
  // per-column pass already yields one action per request.
  const Eigen::MatrixXd actions = actor.act_batch(states);
  std::vector<double> raw(n);
  for (std::size_t c = 0; c < n; ++c) {
    FusionAction a;
    for (std::size_t d = 0; d < kActionDim; ++d) {
      a.a[d] = std::clamp(actions(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)), -1.0, 1.0);
    }
    PredictedScores p;
    for (std::size_t h = 0; h < kHeads; ++h) p.scores[h] = states(static_cast<Eigen::Index>(mtl + h), static_cast<Eigen::Index>(c));
    raw[c] = fuse_scores(p, denormalize_action(a));
  }
  const auto normalized = normalize_scores(raw);
  for (std::size_t c = 0; c < n; ++c) {
    samples[c].raw_score = raw[c];
    samples[c].score = normalized[c];
  }
  return samples;
}

std::pair<double, double> paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired_t_test: need >= 2 matched pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) return {0.0, mean == 0.0 ? 1.0 : 0.0};
  const double t = mean / (sd / std::sqrt(n));
  const boost::math::students_t dist(n - 1.0);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  return {t, p};
}

ComparisonReport compare_policies(const World& world, const FusionPolicy& a, const FusionPolicy& b,
                                  std::size_t batches, std::size_t sessions_per_batch,
                                  std::uint64_t seed) {
  if (batches < 2 || sessions_per_batch == 0) {
    throw std::invalid_argument("compare_policies: need >= 2 batches of >= 1 session");
  }
  ComparisonReport report;
  report.batches = batches;
  report.sessions_per_batch = sessions_per_batch;
  double reward_a = 0.0, reward_b = 0.0, valid_a = 0.0, valid_b = 0.0;
  for (std::size_t batch = 0; batch < batches; ++batch) {
    double batch_a = 0.0, batch_b = 0.0;
    for (std::size_t k = 0; k < sessions_per_batch; ++k) {
      Rng pick(derive_seed(seed, {batch, k, 0}));
      const SimUser& user = world.users[pick.below(world.users.size())];
      const std::uint64_t session_seed = derive_seed(seed, {batch, k, 1});
      const SessionTrace ta = rollout_session(a, world, user, session_seed, k);
      const SessionTrace tb = rollout_session(b, world, user, session_seed, k);
      batch_a += ta.total_reward;
      batch_b += tb.total_reward;
      valid_a += ta.valid_consumptions;
      valid_b += tb.valid_consumptions;
    }
    reward_a += batch_a;
    reward_b += batch_b;
    report.batch_means_a.push_back(batch_a / static_cast<double>(sessions_per_batch));
    report.batch_means_b.push_back(batch_b / static_cast<double>(sessions_per_batch));
  }
  const double total = static_cast<double>(batches * sessions_per_batch);
  report.mean_reward_a = reward_a / total;
  report.mean_reward_b = reward_b / total;
  report.mean_valid_a = valid_a / total;
  report.mean_valid_b = valid_b / total;
  report.lift = report.mean_reward_a - report.mean_reward_b;
  report.relative_lift = report.lift / report.mean_reward_b;
  std::tie(report.t_statistic, report.p_value) = paired_t_test(report.batch_means_a, report.batch_means_b);
  return report;
}

std::string ComparisonReport::to_text() const {
  std::ostringstream out;
  out << "batches=" << batches << '\n'
      << "sessions_per_batch=" << sessions_per_batch << '\n'
      << "mean_session_reward_a=" << fmt_double(mean_reward_a) << '\n'
      << "mean_session_reward_b=" << fmt_double(mean_reward_b) << '\n'
      << "mean_valid_consumptions_a=" << fmt_double(mean_valid_a) << '\n'
      << "mean_valid_consumptions_b=" << fmt_double(mean_valid_b) << '\n'
      << "lift=" << fmt_double(lift) << '\n'
      << "relative_lift=" << fmt_double(relative_lift) << '\n'
      << "paired_t=" << fmt_double(t_statistic) << '\n'
      << "p_value=" << fmt_double(p_value) << '\n';
  return out.str();
}

TrainConfig user_state_only_ablation(TrainConfig config) {
  config.user_state_only = true;
  return config;
}

}  // namespace mtf
