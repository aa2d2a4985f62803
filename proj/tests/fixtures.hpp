#pragma once

// Random inputs shared by the unit and acceptance suites.

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

#include "mtf/policy.hpp"
#include "mtf/rng.hpp"
#include "mtf/transition.hpp"

namespace fixture {

inline mtf::Transition random_transition(mtf::Rng& rng, mtf::StateLayout layout, std::size_t l, bool terminal) {
  const std::size_t dim = layout.total();
  mtf::Transition t;
  t.state_dim = static_cast<std::uint32_t>(dim);
  t.terminal = terminal;
  auto fill = [&](std::vector<double>& v, std::size_t n, double lo, double hi) {
    v.resize(n);
    for (double& x : v) x = rng.uniform(lo, hi);
  };
  fill(t.states, l * dim, -1.0, 1.0);
  fill(t.actions, l * mtf::kActionDim, -1.0, 1.0);
  fill(t.baseline_actions, l * mtf::kActionDim, -1.0, 1.0);
  fill(t.rewards, l, 0.0, 3.0);
  t.labels.assign(l, 0);
  if (!terminal) {
    fill(t.next_states, l * dim, -1.0, 1.0);
    fill(t.next_baseline_actions, l * mtf::kActionDim, -0.3, 0.3);
  }
  t.validate();
  return t;
}

inline Eigen::MatrixXd random_states(mtf::Rng& rng, mtf::StateLayout layout, Eigen::Index n) {
  Eigen::MatrixXd s(static_cast<Eigen::Index>(layout.total()), n);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(-1.0, 1.0);
  return s;
}

/// Distance from each action to the nearest edge of its penalty-free interval.
inline double min_boundary_distance(const Eigen::MatrixXd& actions, const Eigen::MatrixXd& base,
                                    const mtf::ExplorationBounds& bounds) {
  double best = 1e9;
  for (Eigen::Index b = 0; b < actions.cols(); ++b) {
    for (std::size_t d = 0; d < mtf::kActionDim; ++d) {
      const auto r = static_cast<Eigen::Index>(d);
      best = std::min({best, std::abs(actions(r, b) - (base(r, b) + bounds.lower[d])),
                       std::abs(actions(r, b) - (base(r, b) + bounds.upper[d]))});
    }
  }
  return best;
}

}  // namespace fixture
