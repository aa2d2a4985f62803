#include "mtf/nets.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mtf/rng.hpp"

namespace mtf {

namespace {

constexpr std::string_view kNetMagic = "MTFNET01";
constexpr std::uint32_t kNetVersion = 1;

std::uint64_t next_net_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

void MlpSpec::validate() const {
  if (widths.size() < 3) throw std::invalid_argument("MlpSpec: at least one hidden layer required");
  for (std::size_t w : widths) {
    if (w == 0) throw std::invalid_argument("MlpSpec: layer widths must be positive");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) n += widths[k + 1] * (widths[k] + 1);
  return n;
}

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)), id_(next_net_id()) {
  spec_.validate();
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.param_count()));
  std::size_t off = 0;
  for (std::size_t k = 0; k < spec_.layers(); ++k) {
    offsets_.push_back(off);
    off += spec_.widths[k + 1] * (spec_.widths[k] + 1);
  }
}

Mlp::Mlp(const Mlp& other)
    : spec_(other.spec_), params_(other.params_), offsets_(other.offsets_), id_(next_net_id()) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    spec_ = other.spec_;
    params_ = other.params_;
    offsets_ = other.offsets_;
    ++version_;
  }
  return *this;
}

Mlp Mlp::random(MlpSpec spec, std::uint64_t seed) {
  Mlp net(std::move(spec));
  Rng rng(seed);
  auto& p = net.mutable_params();
  for (std::size_t k = 0; k < net.spec_.layers(); ++k) {
    const std::size_t fan_in = net.spec_.widths[k];
    const std::size_t count = net.spec_.widths[k + 1] * (fan_in + 1);
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) {
      p[static_cast<Eigen::Index>(net.offsets_[k] + i)] = rng.uniform(-limit, limit);
    }
  }
  return net;
}

void Mlp::set_params(const Eigen::VectorXd& flat) {
  if (flat.size() != params_.size()) throw std::invalid_argument("Mlp::set_params: size mismatch");
  if (!flat.allFinite()) throw std::invalid_argument("Mlp::set_params: non-finite parameters");
  mutable_params() = flat;
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t layer) const {
  return {params_.data() + offsets_[layer], static_cast<Eigen::Index>(spec_.widths[layer + 1]),
          static_cast<Eigen::Index>(spec_.widths[layer])};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t layer) const {
  const std::size_t out = spec_.widths[layer + 1];
  return {params_.data() + offsets_[layer] + out * spec_.widths[layer], static_cast<Eigen::Index>(out)};
}

ForwardCache Mlp::forward(const Eigen::MatrixXd& input) const {
  if (static_cast<std::size_t>(input.rows()) != spec_.input_dim()) {
    throw std::invalid_argument("Mlp::forward: input width " + std::to_string(input.rows()) +
                                " != " + std::to_string(spec_.input_dim()));
  }
  ForwardCache cache;
  cache.owner_id = id_;
  cache.owner_version = version_;
  cache.activations.reserve(spec_.layers() + 1);
  cache.activations.push_back(input);
  for (std::size_t k = 0; k < spec_.layers(); ++k) {
    Eigen::MatrixXd z = weight(k) * cache.activations.back();
    z.colwise() += bias(k);
    if (k + 1 < spec_.layers()) {
      z = z.cwiseMax(0.0);
    } else if (spec_.output == OutputActivation::kTanh) {
      z = z.array().tanh().matrix();
    }
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

Eigen::MatrixXd Mlp::predict(const Eigen::MatrixXd& input) const {
  if (static_cast<std::size_t>(input.rows()) != spec_.input_dim()) {
    throw std::invalid_argument("Mlp::predict: input width mismatch");
  }
  Eigen::MatrixXd a = input;
  for (std::size_t k = 0; k < spec_.layers(); ++k) {
    Eigen::MatrixXd z = weight(k) * a;
    z.colwise() += bias(k);
    if (k + 1 < spec_.layers()) {
      a = z.cwiseMax(0.0);
    } else if (spec_.output == OutputActivation::kTanh) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

std::vector<double> Mlp::predict(std::span<const double> input) const {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::MatrixXd y = predict(x);
  return {y.data(), y.data() + y.size()};
}

Gradients Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                        bool param_grads) const {
  if (cache.owner_id != id_ || cache.owner_version != version_) {
    throw std::logic_error("Mlp::backward: stale forward cache");
  }
  if (static_cast<std::size_t>(output_grad.rows()) != spec_.output_dim() ||
      output_grad.cols() != cache.output().cols()) {
    throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
  }
  Gradients g;
  if (param_grads) g.params = Eigen::VectorXd::Zero(params_.size());

  Eigen::MatrixXd delta = output_grad;
  if (spec_.output == OutputActivation::kTanh) {
    delta = delta.cwiseProduct((1.0 - cache.output().array().square()).matrix());
  }
  for (std::size_t k = spec_.layers(); k-- > 0;) {
    const Eigen::MatrixXd& in = cache.activations[k];
    if (param_grads) {
      const auto rows = static_cast<Eigen::Index>(spec_.widths[k + 1]);
      const auto cols = static_cast<Eigen::Index>(spec_.widths[k]);
      Eigen::Map<Eigen::MatrixXd> dw(g.params.data() + offsets_[k], rows, cols);
      Eigen::Map<Eigen::VectorXd> db(g.params.data() + offsets_[k] + rows * cols, rows);
      dw.noalias() = delta * in.transpose();
      db = delta.rowwise().sum();
    }
    Eigen::MatrixXd prev = weight(k).transpose() * delta;
    if (k > 0) {
      // ReLU derivative, taken as 0 at the kink.
      prev = prev.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
    }
    delta = std::move(prev);
  }
  g.input = std::move(delta);
  return g;
}

AdamState AdamState::zeros(std::size_t n, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.first_moment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  s.second_moment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  return s;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!grads.allFinite()) throw std::domain_error("adam_step: non-finite gradient");
  const auto& c = state.config;
  ++state.step;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
  state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  params.array() -= c.step_size * (state.first_moment.array() / correction1) /
                    ((state.second_moment.array() / correction2).sqrt() + c.epsilon);
}

TargetPair::TargetPair(Mlp net, SoftUpdateSchedule sched)
    : online(std::move(net)), target(online), schedule(sched) {}

bool maybe_soft_update(const Eigen::VectorXd& online, Eigen::VectorXd& target,
                       SoftUpdateSchedule& schedule) {
  if (online.size() != target.size()) throw std::invalid_argument("maybe_soft_update: shape mismatch");
  if (schedule.delay == 0) throw std::invalid_argument("maybe_soft_update: delay must be positive");
  ++schedule.calls;
  if (schedule.calls % schedule.delay != 0) return false;
  const double w = schedule.rate;
  target = w * online + (1.0 - w) * target;
  return true;
}

bool maybe_soft_update(TargetPair& pair) {
  // Only touch the target's version when an update actually lands.
  Eigen::VectorXd staged = pair.target.params();
  const bool updated = maybe_soft_update(pair.online.params(), staged, pair.schedule);
  if (updated) pair.target.mutable_params() = std::move(staged);
  return updated;
}

void write_mlp(ByteWriter& w, const Mlp& net) {
  const auto& spec = net.spec();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.widths.size()));
  for (std::size_t width : spec.widths) w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(spec.output));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(net.params().size()));
  w.put_doubles(std::span(net.params().data(), static_cast<std::size_t>(net.params().size())));
}

Mlp read_mlp(ByteReader& r) {
  MlpSpec spec;
  const auto n_widths = r.get<std::uint32_t>();
  if (n_widths < 3 || n_widths > 64) throw FormatError("network: implausible layer count");
  for (std::uint32_t k = 0; k < n_widths; ++k) spec.widths.push_back(r.get<std::uint32_t>());
  const auto act = r.get<std::uint8_t>();
  if (act > 1) throw FormatError("network: unknown output activation");
  spec.output = static_cast<OutputActivation>(act);
  spec.validate();
  const auto count = r.get<std::uint64_t>();
  if (count != spec.param_count()) throw FormatError("network: parameter count does not match spec");
  Mlp net(spec);
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  r.get_doubles(std::span(flat.data(), count));
  net.set_params(flat);
  return net;
}

std::vector<std::uint8_t> serialize_mlp(const Mlp& net) {
  ByteWriter w;
  w.put_magic(kNetMagic);
  w.put<std::uint32_t>(kNetVersion);
  write_mlp(w, net);
  return std::move(w).finish();
}

Mlp deserialize_mlp(std::span<const std::uint8_t> bytes) {
  auto r = ByteReader::checked(bytes, "network checkpoint");
  r.expect_magic(kNetMagic);
  if (r.get<std::uint32_t>() != kNetVersion) throw FormatError("network checkpoint: unsupported version");
  Mlp net = read_mlp(r);
  if (!r.at_end()) throw FormatError("network checkpoint: trailing bytes");
  return net;
}

}  // namespace mtf
