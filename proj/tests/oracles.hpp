#pragma once

// Scalar re-implementations used as independent oracles. Nothing here calls
// into the library's numeric code; networks are read only through their
// weight and bias views.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mtf/nets.hpp"
#include "mtf/transition.hpp"

namespace oracle {

inline std::vector<double> forward(const mtf::Mlp& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  const std::size_t layers = net.spec().layers();
  for (std::size_t k = 0; k < layers; ++k) {
    const auto W = net.weight(k);
    const auto b = net.bias(k);
    std::vector<double> z(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      double acc = b(i);
      for (Eigen::Index j = 0; j < W.cols(); ++j) acc += W(i, j) * a[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = acc;
    }
    const bool last = k + 1 == layers;
    for (double& v : z) {
      if (!last) v = std::max(v, 0.0);
      else if (net.spec().output == mtf::OutputActivation::kTanh) v = std::tanh(v);
    }
    a = std::move(z);
  }
  return a;
}

inline double penalty_1d(double a, double a_bp, double lo, double hi, double beta) {
  const double w = beta * (hi - lo);
  if (a > a_bp + lo && a < a_bp + hi) return 0.0;
  if (a >= a_bp + hi) return std::exp((a - (a_bp + hi)) / w);
  return std::exp(((a_bp + lo) - a) / w);
}

inline std::vector<double> concat(const double* s, std::size_t n, const std::vector<double>& a) {
  std::vector<double> v(s, s + n);
  v.insert(v.end(), a.begin(), a.end());
  return v;
}

/// Batch-mean squared TD error for one critic, optionally subtracting
/// delta * boundary penalty from each bootstrapped target value.
inline double critic_td(const mtf::Mlp& q, const mtf::Mlp& q_target, const mtf::Mlp& target_actor,
                        const std::vector<mtf::Transition>& batch, double lo, double hi, double beta,
                        double gamma, double delta) {
  double total = 0.0;
  for (const auto& t : batch) {
    const std::size_t l = t.list_length();
    double q_sum = 0.0;
    double y = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      std::vector<double> a(t.actions.begin() + static_cast<long>(j * 10), t.actions.begin() + static_cast<long>(j * 10 + 10));
      q_sum += forward(q, concat(t.states.data() + j * t.state_dim, t.state_dim, a))[0];
      y += t.rewards[j];
      if (!t.terminal) {
        const std::vector<double> s2(t.next_states.begin() + static_cast<long>(j * t.state_dim),
                                     t.next_states.begin() + static_cast<long>((j + 1) * t.state_dim));
        const std::vector<double> a2 = forward(target_actor, s2);
        double v = forward(q_target, concat(s2.data(), s2.size(), a2))[0];
        double d = 0.0;
        for (std::size_t k = 0; k < 10; ++k) d += penalty_1d(a2[k], t.next_baseline_actions[j * 10 + k], lo, hi, beta);
        v -= delta * d;
        y += gamma * v;
      }
    }
    total += (q_sum - y) * (q_sum - y);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace oracle
