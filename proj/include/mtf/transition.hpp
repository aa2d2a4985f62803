#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mtf/fusion.hpp"

namespace mtf {

/// One served request. Per-item arrays are row-major with one row per shown
/// item (list_length rows). Next-request arrays are empty on terminal records.
struct Transition {
  std::uint64_t session_id = 0;
  std::uint64_t user_id = 0;
  std::uint32_t round_id = 0;
  std::uint32_t request_index = 0;
  std::uint32_t state_dim = 0;
  bool terminal = true;

  std::vector<double> states;            // l x state_dim
  std::vector<double> actions;           // l x kActionDim
  std::vector<double> baseline_actions;  // l x kActionDim
  std::vector<double> rewards;           // l
  std::vector<std::uint8_t> labels;      // l, consumption labels
  std::vector<double> next_states;            // l x state_dim, or empty
  std::vector<double> next_baseline_actions;  // l x kActionDim, or empty

  std::size_t list_length() const { return rewards.size(); }
  std::span<const double> state(std::size_t j) const {
    return std::span(states).subspan(j * state_dim, state_dim);
  }
  std::span<const double> next_state(std::size_t j) const {
    return std::span(next_states).subspan(j * state_dim, state_dim);
  }
  std::span<const double> action(std::size_t j) const {
    return std::span(actions).subspan(j * kActionDim, kActionDim);
  }

  /// Throws std::invalid_argument when shapes or values break the record invariants.
  void validate() const;
};

}  // namespace mtf
