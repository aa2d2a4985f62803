#pragma once

// Dense ReLU networks with exact reverse-mode gradients, Adam, and delayed
// soft target updates. All parameters of one network live in a single flat
// vector; layer k stores its weight matrix (out x in, column-major) followed
// by its bias.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mtf/binary_io.hpp"

namespace mtf {

enum class OutputActivation : std::uint8_t { kIdentity = 0, kTanh = 1 };

struct MlpSpec {
  /// Input width, hidden widths, output width.
  std::vector<std::size_t> widths;
  OutputActivation output = OutputActivation::kIdentity;

  void validate() const;
  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  std::size_t param_count() const;
  bool operator==(const MlpSpec&) const = default;
};

class Mlp;

/// Activations kept by forward() for a later backward(). Carries the identity
/// and version of the network it came from so stale caches are refused.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // [0] is the input
  std::uint64_t owner_id = 0;
  std::uint64_t owner_version = 0;

  const Eigen::MatrixXd& output() const { return activations.back(); }
};

struct Gradients {
  Eigen::VectorXd params;
  Eigen::MatrixXd input;
};

class Mlp {
 public:
  explicit Mlp(MlpSpec spec);
  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static Mlp random(MlpSpec spec, std::uint64_t seed);

  const MlpSpec& spec() const { return spec_; }
  const Eigen::VectorXd& params() const { return params_; }
  /// Any mutable access invalidates outstanding forward caches.
  Eigen::VectorXd& mutable_params() {
    ++version_;
    return params_;
  }
  void set_params(const Eigen::VectorXd& flat);

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  /// Input is (input_dim x batch); one column per sample.
  ForwardCache forward(const Eigen::MatrixXd& input) const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& input) const;
  std::vector<double> predict(std::span<const double> input) const;

  /// Gradients of sum_b <output_grad_b, output_b> w.r.t. parameters and input.
  /// With `param_grads` false only the input gradient is computed.
  Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                     bool param_grads = true) const;

  bool operator==(const Mlp& other) const { return spec_ == other.spec_ && params_ == other.params_; }

 private:
  std::size_t offset(std::size_t layer) const { return offsets_[layer]; }

  MlpSpec spec_;
  Eigen::VectorXd params_;
  std::vector<std::size_t> offsets_;
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n, AdamConfig config = {});
};

/// Bias-corrected Adam. Throws on non-finite gradients or shape mismatch.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state);

/// Delayed soft update: every `delay` calls, target <- rate*online + (1-rate)*target.
struct SoftUpdateSchedule {
  double rate = 0.08;
  std::uint32_t delay = 15;
  std::uint64_t calls = 0;
};

struct TargetPair {
  Mlp online;
  Mlp target;
  SoftUpdateSchedule schedule;

  /// Target starts as an exact copy of online.
  TargetPair(Mlp net, SoftUpdateSchedule schedule);
};

/// Returns true when this call performed an update.
bool maybe_soft_update(const Eigen::VectorXd& online, Eigen::VectorXd& target,
                       SoftUpdateSchedule& schedule);
bool maybe_soft_update(TargetPair& pair);

void write_mlp(ByteWriter& w, const Mlp& net);
Mlp read_mlp(ByteReader& r);

/// Standalone network checkpoint: magic, spec header, f64 parameters, CRC-32.
std::vector<std::uint8_t> serialize_mlp(const Mlp& net);
Mlp deserialize_mlp(std::span<const std::uint8_t> bytes);

}  // namespace mtf
