#pragma once

// Experiment protocols: scratch and logit-KD baselines, TCS / TCS− distillation,
// few-shot transfer with frozen backbones, and coordinate-source ablations.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcs/checkpoint.hpp"
#include "tcs/config.hpp"
#include "tcs/coordinate_system.hpp"
#include "tcs/datasets.hpp"
#include "tcs/elsh.hpp"
#include "tcs/head.hpp"
#include "tcs/network.hpp"
#include "tcs/selection.hpp"
#include "tcs/training.hpp"

namespace tcs {

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void parse_field(const std::string& key, const std::string& text, std::string& out) {
  (void)key;
  out = text;
}
inline void parse_field(const std::string& key, const std::string& text, double& out) {
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) throw ConfigError(key + ": expected a number, got '" + text + "'");
}
inline void parse_field(const std::string& key, const std::string& text, std::uint64_t& out) {
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
}
inline void parse_field(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1") out = true;
  else if (text == "false" || text == "0") out = false;
  else throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::string format_field(const std::string& v) { return v; }
inline std::string format_field(double v) { return format_double(v); }
inline std::string format_field(std::uint64_t v) { return std::to_string(v); }
inline std::string format_field(bool v) { return v ? "true" : "false"; }

}  // namespace detail

struct TrainConfig {
  std::string mode = "tcs";  // scratch | logit_kd | tcs_minus | tcs | tcs_fewshot
  std::uint64_t seed = 1;
  std::uint64_t epochs = 50;
  std::uint64_t batch_size = 64;
  double lr = 0.05;
  std::string lr_schedule = "step";  // step | constant
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t warmup_epochs = 0;  // linear ramp from 0 over the first epochs
  std::uint64_t average_window = 10;

  double lambda = 1e-4;
  double r_final = 0.5;
  std::string selection = "auto";  // auto | on | off; auto selects only on the few-shot path
  std::uint64_t selection_events = 5;
  std::string topdims = "signed";  // signed | absolute
  bool reset_accumulator = false;
  std::string align_init = "auto";  // auto | lstsq | random
  double align_lr_scale = 1.0;
  double align_ridge = 0.0;  // > 0 regularizes the closed-form alignment
  std::string coord_source = "in_domain";  // in_domain | random_basis | out_of_domain
  std::string head_init = "zero";  // zero | kaiming, for the classifier behind the mask

  std::uint64_t lsh_codes = 0;  // 0 means 4 x teacher width
  double elsh_weight = 1.0;
  bool lsh_zero_bias = false;
  bool lsh_per_epoch = false;

  double kd_temperature = 4.0;
  double kd_weight = 0.9;

  std::string student_arch = "mlp:64,64";
  bool freeze_backbone = false;
  std::uint64_t shots = 0;  // > 0 draws a k-shot subset of the training data

  std::string train_data;
  std::string test_data;
  std::string teacher;
  std::string teacher_features;
  std::string student_backbone;
  std::string coordsys;
  std::string ood_data;

  template <class F>
  void visit(F&& f) {
    f("mode", mode);
    f("seed", seed);
    f("epochs", epochs);
    f("batch_size", batch_size);
    f("lr", lr);
    f("lr_schedule", lr_schedule);
    f("momentum", momentum);
    f("weight_decay", weight_decay);
    f("warmup_epochs", warmup_epochs);
    f("average_window", average_window);
    f("lambda", lambda);
    f("r_final", r_final);
    f("selection", selection);
    f("selection_events", selection_events);
    f("topdims", topdims);
    f("reset_accumulator", reset_accumulator);
    f("align_init", align_init);
    f("align_lr_scale", align_lr_scale);
    f("align_ridge", align_ridge);
    f("coord_source", coord_source);
    f("head_init", head_init);
    f("lsh_codes", lsh_codes);
    f("elsh_weight", elsh_weight);
    f("lsh_zero_bias", lsh_zero_bias);
    f("lsh_per_epoch", lsh_per_epoch);
    f("kd_temperature", kd_temperature);
    f("kd_weight", kd_weight);
    f("student_arch", student_arch);
    f("freeze_backbone", freeze_backbone);
    f("shots", shots);
    f("train_data", train_data);
    f("test_data", test_data);
    f("teacher", teacher);
    f("teacher_features", teacher_features);
    f("student_backbone", student_backbone);
    f("coordsys", coordsys);
    f("ood_data", ood_data);
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    const_cast<TrainConfig*>(this)->visit([&](const char* k, auto& v) { kv[k] = detail::format_field(v); });
    return kv;
  }

  /// Applies `kv` on top of the current values; unknown keys are rejected.
  void apply(const KeyValues& kv) {
    for (const auto& [key, text] : kv) {
      bool found = false;
      visit([&](const char* k, auto& v) {
        if (key == k) {
          detail::parse_field(key, text, v);
          found = true;
        }
      });
      if (!found) throw ConfigError("unknown config key '" + key + "'");
    }
  }

  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c;
    c.apply(kv);
    c.validate();
    return c;
  }

  bool uses_teacher() const { return mode != "scratch"; }
  bool uses_head() const { return mode == "tcs" || mode == "tcs_minus" || mode == "tcs_fewshot"; }
  bool uses_elsh() const { return mode == "tcs" && elsh_weight > 0.0; }
  bool fewshot() const { return mode == "tcs_fewshot"; }
  std::size_t effective_selection_events() const {
    if (selection == "off" || (selection == "auto" && !fewshot())) return 0;
    return selection_events;
  }

  void validate() const {
    static const char* modes[] = {"scratch", "logit_kd", "tcs_minus", "tcs", "tcs_fewshot"};
    if (std::find(std::begin(modes), std::end(modes), mode) == std::end(modes)) throw ConfigError("unknown mode '" + mode + "'");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (lr < 0.0) throw ConfigError("lr must be non-negative");
    if (lr_schedule != "step" && lr_schedule != "constant") throw ConfigError("lr_schedule must be step or constant");
    if (!(r_final > 0.0 && r_final <= 1.0)) throw ConfigError("r_final must be in (0, 1]");
    if (lambda < 0.0 || elsh_weight < 0.0 || kd_weight < 0.0 || kd_weight > 1.0) throw ConfigError("loss weights out of range");
    if (kd_temperature <= 0.0) throw ConfigError("kd_temperature must be positive");
    if (selection != "auto" && selection != "on" && selection != "off") throw ConfigError("selection must be auto, on or off");
    if (topdims != "signed" && topdims != "absolute") throw ConfigError("topdims must be signed or absolute");
    if (align_init != "auto" && align_init != "lstsq" && align_init != "random") throw ConfigError("align_init must be auto, lstsq or random");
    if (coord_source != "in_domain" && coord_source != "random_basis" && coord_source != "out_of_domain") {
      throw ConfigError("coord_source must be in_domain, random_basis or out_of_domain");
    }
    if (align_ridge < 0.0) throw ConfigError("align_ridge must be non-negative");
    if (head_init != "kaiming" && head_init != "zero") throw ConfigError("head_init must be kaiming or zero");
    if (average_window == 0) throw ConfigError("average_window must be >= 1");
  }

  /// Checks that the file references needed by the mode are set.
  void validate_refs() const {
    validate();
    if (train_data.empty()) throw ConfigError("train_data is required");
    if (test_data.empty()) throw ConfigError("test_data is required");
    if (uses_teacher() && teacher.empty() && teacher_features.empty()) {
      throw ConfigError("mode " + mode + " requires teacher or teacher_features");
    }
    if (mode == "logit_kd" && teacher.empty()) throw ConfigError("logit_kd requires a teacher checkpoint");
    if (fewshot() && student_backbone.empty()) throw ConfigError("tcs_fewshot requires student_backbone");
    if (coord_source == "out_of_domain" && coordsys.empty() && ood_data.empty()) {
      throw ConfigError("coord_source out_of_domain requires ood_data");
    }
  }

  std::string canonical_text() const { return format_key_values(to_key_values()); }
  std::string hash() const { return checksum(canonical_text()); }
};

/// Counts every example pushed through the teacher.
class TeacherHandle {
 public:
  TeacherHandle() = default;
  explicit TeacherHandle(const Network* net) : net_(net) {}

  bool available() const { return net_ != nullptr; }
  std::size_t passes() const { return passes_; }
  const Network& network() const { return *net_; }

  Matrix features(const Matrix& x) {
    passes_ += x.rows();
    return net_->forward_features(x);
  }
  Matrix logits(const Matrix& x) {
    passes_ += x.rows();
    return net_->forward_logits(x);
  }

 private:
  const Network* net_ = nullptr;
  std::size_t passes_ = 0;
};

/// In-memory counterparts of the file references in TrainConfig.
struct RunInputs {
  Dataset train;
  Dataset test;
  const Network* teacher = nullptr;
  std::optional<Matrix> teacher_features;  // rows aligned with `train` (before k-shot sampling)
  const Network* student_backbone = nullptr;
  std::optional<CoordinateSystem> coordsys;
  std::optional<Dataset> ood;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double elsh = 0.0;
  double accuracy = 0.0;
  std::size_t teacher_passes = 0;
  double seconds = 0.0;
  std::string code_checksum;
};

struct RunMetrics {
  std::string mode;
  std::string coord_source;
  std::uint64_t seed = 0;
  std::string config_hash;
  double accuracy = 0.0;           // folded (deployed) student
  double unfused_accuracy = 0.0;   // same run evaluated through the unfused head
  double argmax_agreement = 1.0;   // folded vs unfused predictions
  double max_logit_gap = 0.0;      // folded vs unfused logits
  std::size_t teacher_passes = 0;
  std::size_t peak_bytes = 0;
  std::size_t train_size = 0;
  std::size_t parameter_count = 0;
  std::size_t averaged_checkpoints = 0;
  std::size_t mask_zeros = 0;
  double alignment_ridge = 0.0;
  std::string code_checksum;
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;
};

struct RunResult {
  RunMetrics metrics;
  Network student;  // deployed network (folded head installed for TCS modes)
  std::optional<CoordinateSystem> coordsys;
  std::optional<SelectionMask> mask;
  std::optional<TeacherCodes> codes;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Seed streams for one run; shared across modes so that paired runs see the same data order and init.
struct RunSeeds {
  std::uint64_t init, batches, align, classifier, lsh, basis, completion, shots;
  explicit RunSeeds(std::uint64_t s)
      : init(Rng::derive(s, 10)),
        batches(Rng::derive(s, 11)),
        align(Rng::derive(s, 12)),
        classifier(Rng::derive(s, 13)),
        lsh(Rng::derive(s, 14)),
        basis(Rng::derive(s, 15)),
        completion(Rng::derive(s, 16)),
        shots(Rng::derive(s, 17)) {}
};

/// Step (or constant) schedule with an optional per-iteration linear warmup.
struct LrPlan {
  StepSchedule steps;
  std::size_t warmup_iters = 0;

  double at(std::size_t epoch, std::size_t iteration) const {
    const double lr = steps.at(epoch);
    if (iteration >= warmup_iters) return lr;
    return lr * static_cast<double>(iteration + 1) / static_cast<double>(warmup_iters);
  }
};

inline LrPlan lr_plan(const TrainConfig& c, std::size_t iters_per_epoch) {
  LrPlan p;
  p.steps = c.lr_schedule == "constant" ? StepSchedule{c.lr, {}, 1.0} : StepSchedule::standard(c.lr, c.epochs);
  p.warmup_iters = c.warmup_epochs * iters_per_epoch;
  return p;
}

inline SgdOptions sgd_options(const TrainConfig& c) { return {c.momentum, c.weight_decay}; }

inline Affine kaiming_affine(std::size_t in, std::size_t out, std::uint64_t seed) {
  Affine a(in, out);
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (double& v : a.weight.values()) v = rng.uniform(-bound, bound);
  return a;
}

/// Copy of `src` with its backbone parameters and a fresh classifier over `classes`.
inline Network with_classes(const Network& src, std::size_t classes, std::uint64_t seed) {
  ArchSpec arch = src.arch();
  arch.classes = classes;
  Network out(arch, seed);
  auto dst = out.parameters(false);
  auto from = const_cast<Network&>(src).parameters(false);
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].value = *from[i].value;
  return out;
}

/// Prepared training/test sets plus everything derived from them before training.
struct Prepared {
  Dataset train;
  const Dataset* test = nullptr;
  std::optional<Matrix> teacher_features;  // rows aligned with `train`
};

inline Prepared prepare(const TrainConfig& c, const RunInputs& in, const RunSeeds& seeds) {
  in.train.validate();
  in.test.validate();
  if (in.train.class_count != in.test.class_count) throw ShapeError("train and test label spaces differ");
  Prepared p;
  p.test = &in.test;
  if (c.shots > 0) {
    const auto rows = sample_k_shot_indices(in.train, c.shots, seeds.shots);
    p.train = in.train.subset(rows);
    if (in.teacher_features) p.teacher_features = gather_rows(*in.teacher_features, rows);
  } else {
    p.train = in.train;
    if (in.teacher_features) p.teacher_features = *in.teacher_features;
  }
  if (p.teacher_features && p.teacher_features->rows() != p.train.size()) {
    throw ShapeError("teacher features have " + std::to_string(p.teacher_features->rows()) + " rows, training set has " +
                     std::to_string(p.train.size()));
  }
  return p;
}

/// Parameter-wise running mean of a fixed list of matrices.
class MatrixAverage {
 public:
  void add(const std::vector<const Matrix*>& values) {
    if (sums_.empty()) {
      for (const Matrix* m : values) sums_.push_back(*m);
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) sums_[i] += *values[i];
    }
    ++count_;
  }
  std::size_t count() const { return count_; }
  void write_to(const std::vector<Matrix*>& targets) const {
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = sums_[i] * (1.0 / static_cast<double>(count_));
  }

 private:
  std::vector<Matrix> sums_;
  std::size_t count_ = 0;
};

inline bool in_average_window(const TrainConfig& c, std::size_t epoch) {
  return epoch + std::min<std::size_t>(c.average_window, c.epochs) >= c.epochs;
}

inline std::vector<const Matrix*> value_ptrs(const std::vector<ParamRef>& refs) {
  std::vector<const Matrix*> out;
  for (const auto& r : refs) out.push_back(r.value);
  return out;
}

inline std::vector<Matrix*> mutable_ptrs(const std::vector<ParamRef>& refs) {
  std::vector<Matrix*> out;
  for (const auto& r : refs) out.push_back(r.value);
  return out;
}

}  // namespace detail

/// Top-1 accuracy of a network on a dataset.
inline double evaluate_accuracy(const Network& net, const Dataset& d) { return evaluate(net, d); }

/// Top-1 accuracy of features pushed through a folded head.
inline double evaluate_accuracy(const FoldedHead& head, const Matrix& features, const Dataset& d) {
  return accuracy(head.logits(features), d.labels);
}

/// CE-only student training (scratch), logit distillation (logit_kd), or a linear probe
/// on a frozen pretrained backbone (scratch with freeze_backbone).
inline RunResult run_supervised(const TrainConfig& c, const RunInputs& in) {
  c.validate();
  if (c.mode != "scratch" && c.mode != "logit_kd") throw ConfigError("run_supervised: mode must be scratch or logit_kd");
  const auto t0 = detail::Clock::now();
  const std::size_t live0 = memory::live_bytes();
  memory::reset_peak();
  const detail::RunSeeds seeds(c.seed);
  detail::Prepared p = detail::prepare(c, in, seeds);
  TeacherHandle teacher(in.teacher);
  const bool kd = c.mode == "logit_kd";
  if (kd && !teacher.available()) throw PreconditionError("logit_kd requires a teacher network");

  const std::size_t classes = p.train.class_count;
  Network net;
  if (in.student_backbone) {
    net = detail::with_classes(*in.student_backbone, classes, seeds.init);
  } else {
    const ArchSpec arch = ArchSpec::parse(c.student_arch, p.train.dim(), classes, p.train.image);
    net = Network(arch, seeds.init);
  }
  const bool frozen = c.freeze_backbone && in.student_backbone;
  if (kd && frozen) throw ConfigError("logit_kd with a frozen backbone is not supported");
  const Matrix train_features = frozen ? net.forward_features(p.train.inputs) : Matrix();

  TrainState state(std::move(net), detail::sgd_options(c), seeds.batches);
  const detail::LrPlan schedule = detail::lr_plan(c, (p.train.size() + c.batch_size - 1) / c.batch_size);
  std::size_t iteration = 0;
  detail::MatrixAverage avg;
  RunResult out;
  out.metrics.train_size = p.train.size();
  for (std::size_t e = 0; e < c.epochs; ++e) {
    const auto te = detail::Clock::now();
    state.epoch = e;
    state.batch = 0;
    std::optional<Matrix> teacher_logits;
    if (kd) teacher_logits = teacher.logits(p.train.inputs);
    double total = 0.0;
    for (const auto& rows : epoch_batches(p.train.size(), c.batch_size, state.rng)) {
      const auto y = gather_labels(p.train.labels, rows);
      const double lr = schedule.at(e, iteration++);
      if (frozen) {
        const Matrix f = gather_rows(train_features, rows);
        Affine& cls = state.net.classifier();
        LossValue lv = cross_entropy(cls.forward(f), y);
        check_finite_loss(lv.loss, state);
        cls.grad_weight.fill(0.0);
        cls.grad_bias.fill(0.0);
        cls.backward(f, lv.grad);
        std::vector<ParamRef> params{{"classifier.weight", &cls.weight, &cls.grad_weight},
                                     {"classifier.bias", &cls.bias, &cls.grad_bias}};
        state.optimizer.step(params, lr);
        ++state.batch;
        total += lv.loss * static_cast<double>(rows.size());
      } else {
        const Matrix x = gather_rows(p.train.inputs, rows);
        if (kd) {
          const Matrix tl = gather_rows(*teacher_logits, rows);
          total += train_step(state, x, y, LossSpec::distill(tl, c.kd_temperature, c.kd_weight), lr) *
                   static_cast<double>(rows.size());
        } else {
          total += train_step(state, x, y, LossSpec::ce(), lr) * static_cast<double>(rows.size());
        }
      }
    }
    if (detail::in_average_window(c, e)) avg.add(state.net.parameter_values());
    EpochRecord rec;
    rec.epoch = e;
    rec.loss = total / static_cast<double>(p.train.size());
    rec.accuracy = evaluate(state.net, *p.test);
    rec.teacher_passes = teacher.passes();
    rec.seconds = detail::seconds_since(te);
    out.metrics.epochs.push_back(rec);
  }
  out.student = std::move(state.net);
  if (avg.count() > 0) avg.write_to(detail::mutable_ptrs(out.student.parameters()));
  out.metrics.averaged_checkpoints = avg.count();
  out.metrics.mode = c.mode;
  out.metrics.seed = c.seed;
  out.metrics.config_hash = c.hash();
  out.metrics.accuracy = evaluate(out.student, *p.test);
  out.metrics.unfused_accuracy = out.metrics.accuracy;
  out.metrics.teacher_passes = teacher.passes();
  out.metrics.parameter_count = out.student.parameter_count();
  out.metrics.peak_bytes = memory::peak() - std::min(memory::peak(), live0);
  out.metrics.seconds = detail::seconds_since(t0);
  return out;
}

inline RunResult run_scratch(TrainConfig c, const RunInputs& in) {
  if (c.mode != "scratch") throw ConfigError("run_scratch: mode must be scratch");
  return run_supervised(c, in);
}

inline RunResult run_logit_kd(TrainConfig c, const RunInputs& in) {
  if (c.mode != "logit_kd") throw ConfigError("run_logit_kd: mode must be logit_kd");
  return run_supervised(c, in);
}

/// Full TCS pipeline. With a frozen student backbone (tcs_fewshot) only the alignment,
/// mask and classifier train, on features extracted once.
inline RunResult run_tcs(const TrainConfig& c, const RunInputs& in) {
  c.validate();
  if (!c.uses_head()) throw ConfigError("run_tcs: mode must be tcs, tcs_minus or tcs_fewshot");
  const bool fewshot = c.fewshot();
  if (fewshot && c.uses_elsh()) throw ConfigError("few-shot runs do not use eLSH");
  if (fewshot && !in.student_backbone) throw PreconditionError("tcs_fewshot requires a pretrained student backbone");
  const auto t0 = detail::Clock::now();
  const std::size_t live0 = memory::live_bytes();
  memory::reset_peak();
  const detail::RunSeeds seeds(c.seed);
  detail::Prepared p = detail::prepare(c, in, seeds);
  TeacherHandle teacher(in.teacher);
  if (!p.teacher_features && !teacher.available()) throw PreconditionError("run_tcs: teacher or teacher features required");

  // One teacher pass over the training set.
  Matrix teacher_features = p.teacher_features ? *p.teacher_features : teacher.features(p.train.inputs);
  const std::size_t dt = teacher_features.cols();
  const std::size_t classes = p.train.class_count;

  CoordinateSystem cs;
  if (in.coordsys) {
    cs = *in.coordsys;
    if (cs.dim() != dt) throw ShapeError("coordinate system width does not match teacher features");
  } else if (c.coord_source == "in_domain") {
    cs = fit_coordinate_system(teacher_features, seeds.completion);
  } else if (c.coord_source == "random_basis") {
    cs = random_coordinate_system(column_mean(teacher_features), seeds.basis);
  } else {
    if (!in.ood || !teacher.available()) throw PreconditionError("out_of_domain requires ood data and a teacher network");
    const Dataset ood = c.shots > 0 ? sample_k_shot(*in.ood, c.shots, seeds.shots) : *in.ood;
    // Fitting on other data is not a pass over the training set; the counter tracks training examples only.
    cs = fit_coordinate_system(teacher.network().forward_features(ood.inputs), seeds.completion);
  }

  Network student;
  if (fewshot) {
    student = detail::with_classes(*in.student_backbone, classes, seeds.init);
  } else {
    student = Network(ArchSpec::parse(c.student_arch, p.train.dim(), classes, p.train.image), seeds.init);
  }
  const std::size_t ds = student.feature_dim();
  const Matrix frozen_features = fewshot ? student.forward_features(p.train.inputs) : Matrix();

  const bool lstsq = c.align_init == "lstsq" || (c.align_init == "auto" && fewshot);
  AlignmentLayer align;
  RunResult out;
  if (lstsq) {
    const Matrix fs = fewshot ? frozen_features : student.forward_features(p.train.inputs);
    AlignmentFit fit = c.align_ridge > 0.0
                           ? AlignmentFit{init_alignment(fs, teacher_features, c.align_ridge), c.align_ridge}
                           : init_alignment_with_fallback(fs, teacher_features);
    align = std::move(fit.layer);
    out.metrics.alignment_ridge = fit.ridge;
  } else {
    align = random_alignment(ds, dt, seeds.align);
  }

  const std::size_t iters_per_epoch = (p.train.size() + c.batch_size - 1) / c.batch_size;
  SelectionMask mask(dt, c.r_final, selection_schedule(c.epochs * iters_per_epoch, c.effective_selection_events(), c.r_final));
  mask.mode = c.topdims == "absolute" ? TopDimsMode::absolute_value : TopDimsMode::signed_value;
  mask.reset_per_event = c.reset_accumulator;
  Affine classifier = c.head_init == "zero" ? Affine(dt, classes) : detail::kaiming_affine(dt, classes, seeds.classifier);
  TcsHead head(std::move(align), cs, std::move(mask), std::move(classifier));

  std::optional<LshProjector> proj;
  std::optional<TeacherCodes> codes;
  if (c.uses_elsh()) {
    proj = make_lsh_projector(dt, c.lsh_codes ? c.lsh_codes : 4 * dt, seeds.lsh, c.lsh_zero_bias);
    codes = teacher_codes(teacher_features, cs, *proj);
  }
  teacher_features = Matrix();

  std::vector<ParamRef> params = fewshot ? std::vector<ParamRef>{} : student.parameters(false);
  std::vector<double> scales(params.size(), 1.0);
  for (auto& hp : head.parameters()) {
    params.push_back(hp);
    scales.push_back(hp.name == "head.align" ? c.align_lr_scale : 1.0);
  }
  Sgd optimizer(detail::sgd_options(c));
  Rng batch_rng(seeds.batches);
  const detail::LrPlan schedule = detail::lr_plan(c, iters_per_epoch);
  const LossWeights weights{c.lambda, c.uses_elsh() ? c.elsh_weight : 0.0};
  const Matrix test_features_frozen = fewshot ? student.forward_features(p.test->inputs) : Matrix();

  detail::MatrixAverage avg;
  std::size_t iteration = 0;
  out.metrics.train_size = p.train.size();
  for (std::size_t e = 0; e < c.epochs; ++e) {
    const auto te = detail::Clock::now();
    if (codes && c.lsh_per_epoch && e > 0) {
      // Baseline mode: teacher features and codes recomputed every epoch.
      codes = teacher_codes(teacher.features(p.train.inputs), cs, *proj);
    }
    double total = 0.0, total_ce = 0.0, total_elsh = 0.0;
    std::size_t batch_index = 0;
    for (const auto& rows : epoch_batches(p.train.size(), c.batch_size, batch_rng)) {
      const auto y = gather_labels(p.train.labels, rows);
      Network::Cache bcache;
      const Matrix fs = fewshot ? gather_rows(frozen_features, rows) : student.forward_features(gather_rows(p.train.inputs, rows), &bcache);
      TcsHead::Cache hcache;
      const Matrix logits = head.forward(fs, &hcache);
      std::optional<LossValue> el;
      if (codes) el = elsh_loss_rows(hcache.induced, gather_rows(codes->codes, rows), *proj);
      CompositeLoss loss = combine_losses(cross_entropy(logits, y), head.mask.m, el ? &*el : nullptr, weights);
      if (!std::isfinite(loss.total)) throw DivergenceError("non-finite loss", e, batch_index);
      for (auto& pr : params) pr.grad->fill(0.0);
      const Matrix grad_fs = head.backward(hcache, loss);
      if (!fewshot) student.backward_features(bcache, grad_fs);
      accumulate_mask_gradient(head.mask, head.grad_mask);
      optimizer.step(params, schedule.at(e, iteration), scales);
      ++iteration;
      advance_schedule(head.mask, iteration);
      total += loss.total * static_cast<double>(rows.size());
      total_ce += loss.ce * static_cast<double>(rows.size());
      total_elsh += loss.elsh * static_cast<double>(rows.size());
      ++batch_index;
    }
    if (detail::in_average_window(c, e)) avg.add(detail::value_ptrs(params));
    EpochRecord rec;
    rec.epoch = e;
    rec.loss = total / static_cast<double>(p.train.size());
    rec.ce = total_ce / static_cast<double>(p.train.size());
    rec.elsh = total_elsh / static_cast<double>(p.train.size());
    const Matrix tf = fewshot ? test_features_frozen : student.forward_features(p.test->inputs);
    rec.accuracy = accuracy(head.compose().logits(tf), p.test->labels);
    rec.teacher_passes = teacher.passes();
    rec.seconds = detail::seconds_since(te);
    if (codes) rec.code_checksum = codes->digest();
    out.metrics.epochs.push_back(rec);
  }
  // Events scheduled past the last iteration (only possible with epochs = 0) are applied now.
  while (!head.mask.frozen()) update_mask(head.mask, head.mask.schedule[head.mask.cursor].iteration);
  if (avg.count() > 0) avg.write_to(detail::mutable_ptrs(params));
  out.metrics.averaged_checkpoints = avg.count();

  const FoldedHead folded = head.fold();
  const Matrix test_features = fewshot ? test_features_frozen : student.forward_features(p.test->inputs);
  const Matrix unfused = head.forward(test_features);
  const Matrix fused = folded.logits(test_features);
  install_folded_head(student, folded);

  RunMetrics& m = out.metrics;
  m.mode = c.mode;
  m.coord_source = c.coord_source;
  m.seed = c.seed;
  m.config_hash = c.hash();
  m.accuracy = evaluate(student, *p.test);
  m.unfused_accuracy = accuracy(unfused, p.test->labels);
  const auto pa = argmax_rows(fused);
  const auto pb = argmax_rows(unfused);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) agree += pa[i] == pb[i];
  m.argmax_agreement = pa.empty() ? 1.0 : static_cast<double>(agree) / static_cast<double>(pa.size());
  m.max_logit_gap = max_abs_diff(fused, unfused);
  m.teacher_passes = teacher.passes();
  m.parameter_count = student.parameter_count();
  m.mask_zeros = head.mask.zero_count();
  if (codes) m.code_checksum = codes->digest();
  m.peak_bytes = memory::peak() - std::min(memory::peak(), live0);
  m.seconds = detail::seconds_since(t0);
  out.student = std::move(student);
  out.coordsys = std::move(head.cs);
  out.mask = std::move(head.mask);
  out.codes = std::move(codes);
  return out;
}

inline RunResult run_fewshot(TrainConfig c, const RunInputs& in) {
  if (c.mode != "tcs_fewshot") throw ConfigError("run_fewshot: mode must be tcs_fewshot");
  return run_tcs(c, in);
}

inline RunResult run_ablation_coordinate_source(TrainConfig c, const RunInputs& in, const std::string& source) {
  c.coord_source = source;
  return run_fewshot(c, in);
}

/// Dispatches on the configured mode.
inline RunResult run(const TrainConfig& c, const RunInputs& in) {
  if (c.mode == "scratch" || c.mode == "logit_kd") return run_supervised(c, in);
  return run_tcs(c, in);
}

// Run artifacts ----------------------------------------------------------------

inline nlohmann::ordered_json metrics_summary(const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["mode"] = m.mode;
  if (!m.coord_source.empty()) j["coord_source"] = m.coord_source;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["accuracy"] = m.accuracy;
  j["unfused_accuracy"] = m.unfused_accuracy;
  j["argmax_agreement"] = m.argmax_agreement;
  j["max_logit_gap"] = m.max_logit_gap;
  j["teacher_passes"] = m.teacher_passes;
  j["peak_matrix_bytes"] = m.peak_bytes;
  j["train_size"] = m.train_size;
  j["parameter_count"] = m.parameter_count;
  j["averaged_checkpoints"] = m.averaged_checkpoints;
  j["mask_zeros"] = m.mask_zeros;
  j["alignment_ridge"] = m.alignment_ridge;
  if (!m.code_checksum.empty()) j["code_checksum"] = m.code_checksum;
  j["final_loss"] = m.epochs.empty() ? 0.0 : m.epochs.back().loss;
  return j;
}

inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = "epoch,loss,accuracy,teacher_passes,seconds,code_checksum\n";
  for (const auto& e : m.epochs) {
    out += std::to_string(e.epoch) + "," + detail::format_double(e.loss) + "," + detail::format_double(e.accuracy) + "," +
           std::to_string(e.teacher_passes) + "," + detail::format_double(e.seconds) + "," + e.code_checksum + "\n";
  }
  return out;
}

inline nlohmann::ordered_json manifest_header(const TrainConfig& c, const std::string& status) {
  nlohmann::ordered_json j;
  j["status"] = status;
  j["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : c.to_key_values()) j["config"][k] = v;
  j["config_hash"] = c.hash();
  const detail::RunSeeds s(c.seed);
  j["seeds"] = {{"run", c.seed},     {"init", s.init},   {"batches", s.batches}, {"align", s.align},
                {"classifier", s.classifier}, {"lsh", s.lsh}, {"basis", s.basis}, {"shots", s.shots}};
  return j;
}

/// Writes the student checkpoint, coordinate system, mask, codes, metrics CSV and the
/// final manifest into `dir`. Wall-clock values appear only in the manifest's "timing"
/// object and the CSV's seconds column.
inline void write_run_artifacts(const std::filesystem::path& dir, const TrainConfig& c, const RunResult& r) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
  save_network(dir / "student", r.student, c.epochs, c.seed);
  artifacts["student/manifest.json"] = file_checksum(dir / "student" / "manifest.json");
  if (r.coordsys) {
    save_coordinate_system(dir / "coordsys", *r.coordsys);
    artifacts["coordsys/coordsys.json"] = file_checksum(dir / "coordsys" / "coordsys.json");
  }
  if (r.mask) {
    write_vector(dir / "mask.tcsf", r.mask->m);
    artifacts["mask.tcsf"] = file_checksum(dir / "mask.tcsf");
  }
  if (r.codes) {
    write_file_bytes(dir / "codes.tcsf", r.codes->bytes());
    artifacts["codes.tcsf"] = file_checksum(dir / "codes.tcsf");
  }
  write_file_bytes(dir / "metrics.csv", metrics_csv(r.metrics));

  nlohmann::ordered_json j = manifest_header(c, "complete");
  j["metrics"] = metrics_summary(r.metrics);
  j["artifacts"] = artifacts;
  std::string content;
  for (const auto& [k, v] : artifacts.items()) content += k + "=" + v.get<std::string>() + "\n";
  content += j["metrics"].dump();
  j["content_hash"] = checksum(c.canonical_text() + content);
  nlohmann::ordered_json timing;
  timing["total_seconds"] = r.metrics.seconds;
  double per_epoch = 0.0;
  for (const auto& e : r.metrics.epochs) per_epoch += e.seconds;
  timing["seconds_per_epoch"] = r.metrics.epochs.empty() ? 0.0 : per_epoch / static_cast<double>(r.metrics.epochs.size());
  j["timing"] = timing;
  write_json(dir / "manifest.json", j);
}

}  // namespace tcs
