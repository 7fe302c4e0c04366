#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tcs/datasets.hpp"
#include "tcs/errors.hpp"
#include "tcs/network.hpp"
#include "tcs/rng.hpp"

namespace tcs {

struct LossValue {
  double loss = 0.0;
  Matrix grad;  // dL/dinput, batch-mean
};

/// Mean cross-entropy over rows; gradient wrt logits.
inline LossValue cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: label count mismatch");
  const double n = static_cast<double>(logits.rows());
  LossValue out{0.0, softmax(logits)};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double p = std::max(out.grad(r, labels[r]), 1e-300);
    out.loss -= std::log(p);
    out.grad(r, labels[r]) -= 1.0;
  }
  out.loss /= n;
  out.grad *= 1.0 / n;
  return out;
}

/// (1 / 2n) Σ ‖y − t‖².
inline LossValue squared_error(const Matrix& outputs, const Matrix& targets) {
  if (!outputs.same_shape(targets)) throw ShapeError("squared_error: shape mismatch");
  const double n = static_cast<double>(outputs.rows());
  LossValue out{0.0, outputs - targets};
  for (double d : out.grad.values()) out.loss += d * d;
  out.loss /= 2.0 * n;
  out.grad *= 1.0 / n;
  return out;
}

/// Classic logit distillation: (1 − w)·CE + w·T²·KL(softmax(t/T) ‖ softmax(s/T)).
inline LossValue distillation_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                                   std::span<const std::size_t> labels, double temperature, double kd_weight) {
  if (!student_logits.same_shape(teacher_logits)) throw ShapeError("distillation_loss: logit shapes differ");
  LossValue ce = cross_entropy(student_logits, labels);
  LossValue out{(1.0 - kd_weight) * ce.loss, ce.grad * (1.0 - kd_weight)};
  if (kd_weight == 0.0) return out;
  const double n = static_cast<double>(student_logits.rows());
  const Matrix ps = softmax(student_logits, temperature);
  const Matrix pt = softmax(teacher_logits, temperature);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double t = pt.values()[i];
    if (t > 0.0) kl += t * (std::log(t) - std::log(std::max(ps.values()[i], 1e-300)));
  }
  const double t2 = temperature * temperature;
  out.loss += kd_weight * t2 * kl / n;
  for (std::size_t i = 0; i < ps.size(); ++i)
    out.grad.values()[i] += kd_weight * temperature * (ps.values()[i] - pt.values()[i]) / n;
  return out;
}

struct LossSpec {
  enum class Kind { cross_entropy, squared_error, distillation };
  Kind kind = Kind::cross_entropy;
  const Matrix* targets = nullptr;  // squared_error targets, or teacher logits for distillation
  double temperature = 4.0;
  double kd_weight = 0.9;

  static LossSpec ce() { return {}; }
  static LossSpec squared(const Matrix& targets) { return {Kind::squared_error, &targets}; }
  static LossSpec distill(const Matrix& teacher_logits, double temperature = 4.0, double kd_weight = 0.9) {
    return {Kind::distillation, &teacher_logits, temperature, kd_weight};
  }

  LossValue evaluate(const Matrix& logits, std::span<const std::size_t> labels) const {
    switch (kind) {
      case Kind::cross_entropy:
        return cross_entropy(logits, labels);
      case Kind::squared_error:
        return squared_error(logits, *targets);
      case Kind::distillation:
        return distillation_loss(logits, *targets, labels, temperature, kd_weight);
    }
    throw Error("unknown loss kind");
  }
};

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum: v ← μv + (g + λw); w ← w − lr·v.
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(SgdOptions options) : options_(options) {}

  const SgdOptions& options() const { return options_; }
  const std::vector<Matrix>& velocity() const { return velocity_; }

  /// `lr_scales` (optional) scales the step per parameter.
  void step(const std::vector<ParamRef>& params, double lr, std::span<const double> lr_scales = {}) {
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.emplace_back(p.value->rows(), p.value->cols());
    }
    if (velocity_.size() != params.size()) throw StateError("sgd: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& w = *params[i].value;
      const Matrix& g = *params[i].grad;
      Matrix& v = velocity_[i];
      if (!v.same_shape(w)) throw StateError("sgd: momentum buffer shape mismatch for " + params[i].name);
      const double scale = lr_scales.empty() ? 1.0 : lr_scales[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        double& vk = v.values()[k];
        vk = options_.momentum * vk + g.values()[k] + options_.weight_decay * w.values()[k];
        w.values()[k] -= lr * scale * vk;
      }
    }
  }

 private:
  SgdOptions options_;
  std::vector<Matrix> velocity_;
};

/// lr multiplied by `factor` at each milestone epoch.
struct StepSchedule {
  double base = 0.05;
  std::vector<std::size_t> milestones;
  double factor = 0.1;

  /// Milestones at 62.5%, 75% and 87.5% of training.
  static StepSchedule standard(double base, std::size_t epochs) {
    StepSchedule s{base, {}, 0.1};
    for (double f : {0.625, 0.75, 0.875}) s.milestones.push_back(static_cast<std::size_t>(f * static_cast<double>(epochs)));
    return s;
  }

  double at(std::size_t epoch) const {
    double lr = base;
    for (std::size_t m : milestones)
      if (epoch >= m) lr *= factor;
    return lr;
  }
};

struct TrainState {
  Network net;
  Sgd optimizer;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  Rng rng;
  std::vector<double> loss_history;

  TrainState(Network network, SgdOptions opt, std::uint64_t seed) : net(std::move(network)), optimizer(opt), rng(seed) {}
};

inline void check_finite_loss(double loss, const TrainState& s) {
  if (!std::isfinite(loss)) throw DivergenceError("non-finite loss", s.epoch, s.batch);
}

/// One momentum-SGD step on `batch`. Returns the pre-update batch loss.
inline double train_step(TrainState& state, const Matrix& batch, std::span<const std::size_t> labels, const LossSpec& loss,
                         double lr) {
  if (lr < 0.0) throw PreconditionError("train_step: learning rate must be non-negative");
  Network::Cache cache;
  const Matrix logits = state.net.forward_logits(batch, &cache);
  LossValue lv = loss.evaluate(logits, labels);
  check_finite_loss(lv.loss, state);
  state.net.zero_grad();
  state.net.backward_logits(cache, lv.grad);
  state.optimizer.step(state.net.parameters(), lr);
  ++state.batch;
  return lv.loss;
}

/// Shuffled mini-batch row indices for one epoch.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw PreconditionError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  return out;
}

inline std::vector<std::size_t> gather_labels(std::span<const std::size_t> labels, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

/// Top-1 accuracy; predictions are argmax with lowest-index tie breaking.
inline double accuracy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

inline double evaluate(const Network& net, const Dataset& d) {
  if (net.class_count() != d.class_count) throw ShapeError("evaluate: label space mismatch");
  return accuracy(net.forward_logits(d.inputs), d.labels);
}

struct TeacherTraining {
  std::size_t batch_size = 64;
  double lr = 0.05;
  SgdOptions sgd;
};

struct TrainedNetwork {
  Network net;
  std::vector<double> epoch_loss;
};

/// Supervised CE training from a seeded init; epochs = 0 returns the init unchanged.
inline TrainedNetwork train_teacher(const Dataset& d, const ArchSpec& arch, std::size_t epochs, std::uint64_t seed,
                                    const TeacherTraining& opt = {}) {
  d.validate();
  TrainState state(Network(arch, Rng::derive(seed, 0)), opt.sgd, Rng::derive(seed, 1));
  const StepSchedule schedule = StepSchedule::standard(opt.lr, epochs);
  std::vector<double> log;
  for (std::size_t e = 0; e < epochs; ++e) {
    state.epoch = e;
    state.batch = 0;
    double total = 0.0;
    const auto batches = epoch_batches(d.size(), opt.batch_size, state.rng);
    for (const auto& rows : batches) {
      const Matrix x = gather_rows(d.inputs, rows);
      const auto y = gather_labels(d.labels, rows);
      total += train_step(state, x, y, LossSpec::ce(), schedule.at(e)) * static_cast<double>(rows.size());
    }
    log.push_back(total / static_cast<double>(d.size()));
  }
  return {std::move(state.net), std::move(log)};
}

/// Parameter-wise arithmetic mean of architecturally identical networks.
inline Network average_checkpoints(std::span<const Network> nets) {
  if (nets.empty()) throw PreconditionError("average_checkpoints: no networks");
  Network out = nets[0];
  auto dst = out.parameters();
  for (std::size_t i = 1; i < nets.size(); ++i) {
    if (!(nets[i].arch() == nets[0].arch())) throw ShapeError("average_checkpoints: architecture mismatch");
    const auto src = nets[i].parameter_values();
    if (src.size() != dst.size()) throw ShapeError("average_checkpoints: parameter count mismatch");
    for (std::size_t p = 0; p < dst.size(); ++p) {
      if (!src[p]->same_shape(*dst[p].value)) throw ShapeError("average_checkpoints: shape mismatch in " + dst[p].name);
      *dst[p].value += *src[p];
    }
  }
  for (auto& p : dst) *p.value *= 1.0 / static_cast<double>(nets.size());
  return out;
}

}  // namespace tcs
