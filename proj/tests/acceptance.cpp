// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "tcs/cli.hpp"
#include "tcs/scenarios.hpp"

namespace tcs::acceptance {
namespace {

namespace fs = std::filesystem;

// Tolerances and limits.
constexpr double kSvdOrthonormality = 1e-8;
constexpr double kSvdReconstruction = 1e-6;
constexpr double kSvdSpectrum = 1e-6;
constexpr double kLeastSquares = 1e-8;
constexpr double kLinalgSeconds = 5.0;
constexpr double kGradientRelative = 1e-3;
constexpr double kGradientSeconds = 30.0;
constexpr std::size_t kGradientConfigs = 10;
constexpr double kFoldMaxAbs = 1e-5;
constexpr double kExperimentSeconds = 600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------

Outcome linalg_oracles() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst_orth = 0, worst_recon = 0, worst_spec = 0, worst_ls = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(64);
    const std::size_t cols = 1 + rng.below(32);
    const Matrix x = rng.normal_matrix(rows, cols);
    const SvdResult s = svd_thin(x);
    const std::size_t k = s.sigma.size();
    worst_orth = std::max({worst_orth,
                           max_abs_diff(oracle::naive_matmul(oracle::naive_transpose(s.u), s.u), Matrix::identity(k)),
                           max_abs_diff(oracle::naive_matmul(oracle::naive_transpose(s.v), s.v), Matrix::identity(k))});
    Matrix us = s.u;
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t c = 0; c < k; ++c) us(r, c) *= s.sigma[c];
    worst_recon = std::max(worst_recon, max_abs_diff(oracle::naive_matmul(us, oracle::naive_transpose(s.v)), x));
    // Gram eigenvalues are σ²; compare on that scale relative to the largest.
    const Matrix gram = rows >= cols ? oracle::naive_matmul(oracle::naive_transpose(x), x)
                                     : oracle::naive_matmul(x, oracle::naive_transpose(x));
    const auto ev = oracle::symmetric_eigenvalues(gram);
    const double scale = std::max(1.0, ev.front());
    for (std::size_t i = 0; i < k; ++i)
      worst_spec = std::max(worst_spec, std::abs(s.sigma[i] * s.sigma[i] - ev[i]) / scale);

    // Least squares against the closed form on a well-posed tall system.
    const std::size_t n = cols + 5 + rng.below(20);
    const Matrix a = rng.normal_matrix(n, cols);
    const Matrix b = rng.normal_matrix(n, 1 + rng.below(6));
    const Matrix at = oracle::naive_transpose(a);
    const Matrix closed = oracle::gauss_solve(oracle::naive_matmul(at, a), oracle::naive_matmul(at, b));
    worst_ls = std::max(worst_ls, max_abs_diff(least_squares(a, b), closed));
  }
  const double secs = since(t0);
  const bool pass = worst_orth <= kSvdOrthonormality && worst_recon <= kSvdReconstruction && worst_spec <= kSvdSpectrum &&
                    worst_ls <= kLeastSquares && secs < kLinalgSeconds;
  return {pass, fmt("orthonormality %.1e, reconstruction %.1e, spectrum %.1e, lstsq %.1e, %.2f s", worst_orth, worst_recon,
                    worst_spec, worst_ls, secs)};
}

// 2 -------------------------------------------------------------------------

double weighted_sum(const Matrix& y, const Matrix& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * r.values()[i];
  return s;
}

struct GradientProbe {
  std::size_t checked = 0;
  double worst = 0.0;
  std::string context;
  std::string worst_at;

  void check(double analytic, const std::function<double()>& f, double& x, double eps = 1e-6) {
    const double fd = oracle::central_difference(f, x, eps);
    const double err = oracle::relative_error(analytic, fd, 1e-6);
    if (err > worst) {
      worst = err;
      worst_at = context;
    }
    ++checked;
  }
};

// Checks input and parameter gradients of a layer for a random linear functional of its output.
template <class Layer>
void probe_layer(GradientProbe& g, Layer& layer, Matrix x, std::vector<std::pair<Matrix*, Matrix*>> params, Rng& rng) {
  const Matrix probe = rng.normal_matrix(x.rows(), layer.forward(x).cols());
  for (auto& [value, grad] : params) grad->fill(0.0);
  const Matrix grad_x = layer.backward(x, probe);
  const auto f = [&] { return weighted_sum(layer.forward(x), probe); };
  const std::string layer_name = g.context;
  g.context = layer_name + " input";
  for (std::size_t i = 0; i < x.size(); i += 1 + x.size() / 24) g.check(grad_x.values()[i], f, x.values()[i]);
  g.context = layer_name + " parameters";
  for (auto& [value, grad] : params)
    for (std::size_t i = 0; i < value->size(); i += 1 + value->size() / 24) g.check(grad->values()[i], f, value->values()[i]);
}

// ReLU is not differentiable at 0. Zero-initialized biases put whole rows there when an upstream
// layer is dead, so give biases random values and redraw until every ReLU input clears the FD step.
void keep_off_relu_kinks(Network& net, const Matrix& x, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& p : net.parameters())
      if (p.name.ends_with(".bias")) *p.value = rng.normal_matrix(p.value->rows(), p.value->cols()) * 0.5;
    Network::Cache cache;
    net.forward_features(x, &cache);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < net.backbone().size(); ++i)
      if (std::holds_alternative<Relu>(net.backbone()[i]))
        for (double v : cache.inputs[i].values()) margin = std::min(margin, std::abs(v));
    if (margin > 1e-4) return;
  }
  throw StateError("keep_off_relu_kinks: no bias draw cleared the kinks");
}

void probe_network(GradientProbe& g, Network net, const Matrix& x, const std::vector<std::size_t>& y) {
  Rng rng(net.input_dim());
  keep_off_relu_kinks(net, x, rng);
  Network::Cache cache;
  const LossValue lv = cross_entropy(net.forward_logits(x, &cache), y);
  net.zero_grad();
  net.backward_logits(cache, lv.grad);
  const auto f = [&] { return cross_entropy(net.forward_logits(x), y).loss; };
  for (auto& p : net.parameters()) {
    g.context = "network " + p.name;
    for (std::size_t i = 0; i < p.value->size(); i += 1 + p.value->size() / 16) g.check(p.grad->values()[i], f, p.value->values()[i]);
  }
}

// Student backbone, alignment, induction, mask, classifier, CE + λ‖m‖₁ + eLSH.
void probe_composite(GradientProbe& g, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t in = 7, dt = 6, classes = 4, n = 10;
  Network student(ArchSpec::parse("mlp:9,5", in, classes), seed);
  Affine cls(dt, classes);
  cls.weight = rng.normal_matrix(dt, classes);
  cls.bias = rng.normal_matrix(1, classes);
  SelectionMask mask(dt, 0.5, {});
  for (double& v : mask.m) v = 0.2 + 0.8 * rng.uniform();
  TcsHead head({rng.normal_matrix(5, dt) * 0.5}, fit_coordinate_system(rng.normal_matrix(30, dt), seed), mask, cls);
  const LshProjector proj = make_lsh_projector(dt, 4 * dt, seed);
  Matrix codes(n, 4 * dt);
  for (double& c : codes.values()) c = rng.uniform() < 0.5 ? 0.0 : 1.0;
  Matrix x = rng.normal_matrix(n, in);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(classes);
  keep_off_relu_kinks(student, x, rng);
  const LossWeights w{0.01, 0.8};

  const auto total = [&] {
    const Matrix fs = student.forward_features(x);
    TcsHead::Cache hc;
    const Matrix logits = head.forward(fs, &hc);
    const LossValue el = elsh_loss_rows(hc.induced, codes, proj);
    return combine_losses(cross_entropy(logits, y), head.mask.m, &el, w).total;
  };
  Network::Cache bc;
  const Matrix fs = student.forward_features(x, &bc);
  TcsHead::Cache hc;
  const Matrix logits = head.forward(fs, &hc);
  const LossValue el = elsh_loss_rows(hc.induced, codes, proj);
  student.zero_grad();
  head.zero_grad();
  student.backward_features(bc, head.backward(hc, combine_losses(cross_entropy(logits, y), head.mask.m, &el, w)));

  auto params = student.parameters(false);
  for (auto& p : head.parameters()) params.push_back(p);
  for (auto& p : params) {
    g.context = "composite " + p.name;
    for (std::size_t i = 0; i < p.value->size(); i += 1 + p.value->size() / 12) g.check(p.grad->values()[i], total, p.value->values()[i]);
  }
  const Vector grad_mask = head.grad_mask;
  g.context = "composite mask";
  for (std::size_t i = 0; i < dt; ++i) g.check(grad_mask[i], total, head.mask.m[i]);
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  GradientProbe g;
  std::size_t configs = 0;
  Rng rng(202);
  for (auto [i, o] : {std::pair<std::size_t, std::size_t>{6, 4}, {11, 3}}) {
    Affine a(i, o);
    a.weight = rng.normal_matrix(i, o);
    a.bias = rng.normal_matrix(1, o);
    g.context = "affine";
    probe_layer(g, a, rng.normal_matrix(5, i), {{&a.weight, &a.grad_weight}, {&a.bias, &a.grad_bias}}, rng);
    ++configs;
  }
  {
    Relu r;
    Matrix x = rng.normal_matrix(6, 9);
    for (double& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.1;
    g.context = "relu";
    probe_layer(g, r, x, {}, rng);
    ++configs;
  }
  for (std::size_t pad : {0u, 1u}) {
    Conv2d conv({2, 5, 4}, 3, 3, pad);
    conv.weight = rng.normal_matrix(conv.weight.rows(), conv.weight.cols());
    conv.bias = rng.normal_matrix(1, 3);
    g.context = "conv2d";
    probe_layer(g, conv, rng.normal_matrix(3, 40), {{&conv.weight, &conv.grad_weight}, {&conv.bias, &conv.grad_bias}}, rng);
    ++configs;
  }
  {
    GlobalAvgPool pool{{3, 4, 2}};
    g.context = "global average pool";
    probe_layer(g, pool, rng.normal_matrix(4, 24), {}, rng);
    ++configs;
  }
  probe_network(g, Network(ArchSpec::parse("mlp:8,7,6", 5, 4), 3), rng.normal_matrix(9, 5), {0, 1, 2, 3, 0, 1, 2, 3, 0});
  probe_network(g, Network(ArchSpec::parse("cnn:3,4", 25, 3, ImageShape{1, 5, 5}), 4), rng.normal_matrix(4, 25), {0, 1, 2, 1});
  configs += 2;
  for (std::uint64_t seed = 1; seed <= 4; ++seed, ++configs) probe_composite(g, seed);
  const double secs = since(t0);
  const bool pass = configs >= kGradientConfigs && g.worst <= kGradientRelative && secs < kGradientSeconds;
  return {pass, fmt("%zu configurations, %zu coordinates, worst relative error %.1e (%s), %.2f s", configs, g.checked, g.worst,
                    g.worst_at.c_str(), secs)};
}

// 3 -------------------------------------------------------------------------

// Trains a head on frozen features with the default selection schedule, then returns it.
TcsHead trained_head(std::uint64_t seed) {
  const std::size_t ds = 12, dt = 16, classes = 5, iterations = 200, batch = 32;
  const Dataset d = make_mixture(classes, ds, 1.5, Rng::derive(seed, 0)).sample(60, Rng::derive(seed, 1), "features");
  Rng rng(Rng::derive(seed, 2));
  const Matrix lift = rng.normal_matrix(ds, dt);
  Matrix teacher = matmul(d.inputs, lift);
  for (double& v : teacher.values()) v = std::tanh(v) + 0.05 * rng.normal();
  TcsHead head(init_alignment(d.inputs, teacher), fit_coordinate_system(teacher, seed),
               SelectionMask(dt, 0.5, selection_schedule(iterations, 5, 0.5)), Affine(dt, classes));
  Rng batches(Rng::derive(seed, 3));
  std::size_t it = 0;
  while (it < iterations) {
    for (const auto& rows : epoch_batches(d.size(), batch, batches)) {
      if (it == iterations) break;
      const Matrix x = gather_rows(d.inputs, rows);
      TcsHead::Cache cache;
      const Matrix logits = head.forward(x, &cache);
      head.zero_grad();
      head.backward(cache, combine_losses(cross_entropy(logits, gather_labels(d.labels, rows)), head.mask.m, nullptr, {1e-4, 0.0}));
      for (auto& p : head.parameters()) *p.value -= *p.grad * 0.05;
      accumulate_mask_gradient(head.mask, head.grad_mask);
      advance_schedule(head.mask, ++it);
    }
  }
  return head;
}

Outcome fold_equivalence() {
  double worst_gap = 0.0;
  std::size_t disagreements = 0, total = 0;
  bool counts_match = true, frozen = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TcsHead head = trained_head(seed);
    frozen = frozen && head.mask.frozen() && head.mask.zero_count() == 8;
    const FoldedHead folded = head.fold();
    Rng rng(Rng::derive(seed, 4));
    const Matrix x = rng.normal_matrix(1000, head.student_dim()) * 2.0;
    const Matrix unfused = head.forward(x);
    const Matrix fused = folded.logits(x);
    worst_gap = std::max(worst_gap, max_abs_diff(unfused, fused));
    const auto a = argmax_rows(unfused);
    const auto b = argmax_rows(fused);
    for (std::size_t i = 0; i < a.size(); ++i) disagreements += a[i] != b[i];
    total += a.size();
    const Affine plain(head.student_dim(), head.classifier.out_dim());
    counts_match = counts_match && folded.parameter_count() == plain.weight.size() + plain.bias.size();
  }
  const bool pass = worst_gap <= kFoldMaxAbs && disagreements == 0 && counts_match && frozen;
  return {pass, fmt("5 trained heads x 1000 inputs: max |gap| %.1e, argmax agreement %zu/%zu, folded params %s plain classifier",
                    worst_gap, total - disagreements, total, counts_match ? "==" : "!=")};
}

// 4 -------------------------------------------------------------------------

Outcome mask_schedule() {
  bool pass = true;
  std::string detail;
  Rng rng(404);
  for (std::size_t dt : {16u, 64u, 512u}) {
    const std::size_t iterations = 250;
    SelectionMask m(dt, 0.5, selection_schedule(iterations, 5, 0.5));
    bool bounded = true;
    for (std::size_t it = 1; it <= iterations; ++it) {
      Vector g(dt);
      for (double& v : g) v = rng.normal();
      accumulate_mask_gradient(m, g);
      advance_schedule(m, it);
      for (double v : m.m) bounded = bounded && v >= 0.0 && v <= 1.0;
    }
    const std::size_t expected = static_cast<std::size_t>(std::llround(0.5 * static_cast<double>(dt)));
    const bool ok = bounded && m.frozen() && m.zero_count() == expected;
    pass = pass && ok;
    detail += fmt("%sD=%zu: %zu zeros (want %zu)%s", detail.empty() ? "" : ", ", dt, m.zero_count(), expected,
                  bounded ? "" : " out of [0,1]");
  }
  return {pass, detail};
}

// 5 -------------------------------------------------------------------------

KdWorld small_world() {
  KdWorldOptions o;
  o.classes = 4;
  o.dim = 16;
  o.separation = 0.8;
  o.teacher_per_class = 100;
  o.pool_per_class = 40;
  o.test_per_class = 40;
  o.teacher_arch = "mlp:32";
  o.teacher_epochs = 5;
  return make_kd_world(o);
}

Outcome single_pass() {
  const KdWorld w = small_world();
  const RunInputs in = kd_inputs(w);
  const std::size_t n = in.train.size();
  TrainConfig c;
  c.mode = "tcs";
  c.epochs = 6;
  c.student_arch = "mlp:16";
  const RunResult once = run(c, in);
  c.lsh_per_epoch = true;
  const RunResult per_epoch = run(c, in);
  bool stable = !once.metrics.code_checksum.empty();
  for (const auto& e : once.metrics.epochs) stable = stable && e.code_checksum == once.metrics.code_checksum;
  const bool pass = once.metrics.teacher_passes == n && per_epoch.metrics.teacher_passes == n * c.epochs && stable;
  return {pass, fmt("N=%zu: tcs %zu passes, per-epoch baseline %zu (want %zu), code checksum %s over %zu epochs", n,
                    once.metrics.teacher_passes, per_epoch.metrics.teacher_passes, n * c.epochs,
                    stable ? "constant" : "CHANGED", once.metrics.epochs.size())};
}

// 6 -------------------------------------------------------------------------

Outcome kd_direction() {
  const auto t0 = Clock::now();
  const KdWorld w = make_kd_world();
  const RunInputs in = kd_inputs(w);
  const char* modes[] = {"scratch", "tcs_minus", "tcs"};
  double acc[5][3];
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int m = 0; m < 3; ++m) {
      TrainConfig c;
      c.mode = modes[m];
      c.seed = seed;
      c.shots = 64;
      c.batch_size = 16;
      c.lr = 0.02;
      c.align_lr_scale = 10.0;
      acc[seed - 1][m] = run(c, in).metrics.accuracy;
    }
  }
  double mean[3] = {0, 0, 0};
  int tcs_wins = 0, tcs_over_minus = 0;
  for (auto& a : acc) {
    for (int m = 0; m < 3; ++m) mean[m] += a[m] / 5.0;
    tcs_wins += a[2] >= a[0];
    tcs_over_minus += a[2] >= a[1];
  }
  const double secs = since(t0);
  const bool pass = tcs_wins >= 4 && mean[2] > mean[0] && tcs_over_minus >= 3 && secs < kExperimentSeconds;
  return {pass, fmt("teacher %.3f; mean scratch %.3f, tcs- %.3f, tcs %.3f; tcs>=scratch %d/5, tcs>=tcs- %d/5; %.0f s",
                    evaluate(w.teacher, w.test), mean[0], mean[1], mean[2], tcs_wins, tcs_over_minus, secs)};
}

// 7 -------------------------------------------------------------------------

Outcome coordinate_ablation() {
  const auto t0 = Clock::now();
  const FewShotWorld w = make_fewshot_world();
  const RunInputs in = fewshot_inputs(w);
  const char* sources[] = {"in_domain", "random_basis", "out_of_domain"};
  double mean[3] = {0, 0, 0};
  int between = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double acc[3];
    for (int s = 0; s < 3; ++s) {
      TrainConfig c;
      c.mode = "tcs_fewshot";
      c.seed = seed;
      c.shots = 16;
      c.align_ridge = 10.0;
      acc[s] = run_ablation_coordinate_source(c, in, sources[s]).metrics.accuracy;
      mean[s] += acc[s] / 5.0;
    }
    between += acc[2] < acc[0] && acc[2] > acc[1];
  }
  const double secs = since(t0);
  const bool pass = mean[0] > mean[1] && between >= 3 && secs < kExperimentSeconds;
  return {pass, fmt("mean in_domain %.3f, random_basis %.3f, out_of_domain %.3f; ood strictly between %d/5; %.0f s", mean[0],
                    mean[1], mean[2], between, secs)};
}

// 8 -------------------------------------------------------------------------

std::size_t backbone_parameters(Network& net) {
  std::size_t n = 0;
  for (const auto& p : net.parameters(false)) n += p.value->size();
  return n;
}

Outcome capacity_gap() {
  FewShotWorldOptions o;
  o.teacher_arch = "mlp:48,96";
  o.student_arch = "mlp:128,128";
  FewShotWorld w = make_fewshot_world(o);
  const RunInputs in = fewshot_inputs(w);
  const std::size_t teacher_size = backbone_parameters(w.teacher);
  const std::size_t student_size = backbone_parameters(w.student);
  double tcs = 0.0, probe = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TrainConfig c;
    c.seed = seed;
    c.shots = 16;
    c.align_ridge = 10.0;
    c.mode = "tcs_fewshot";
    tcs += run(c, in).metrics.accuracy / 3.0;
    c.mode = "scratch";
    c.freeze_backbone = true;
    probe += run(c, in).metrics.accuracy / 3.0;
  }
  const bool pass = teacher_size < student_size && tcs >= probe;
  return {pass, fmt("teacher backbone %zu params < student %zu; mean tcs %.3f vs linear probe %.3f", teacher_size,
                    student_size, tcs, probe)};
}

// 9 -------------------------------------------------------------------------

using Snapshot = std::map<std::string, std::string>;

// Drops the wall-clock fields: the manifest "timing" object and the CSV seconds column.
std::string normalized(const fs::path& rel, const std::string& bytes) {
  if (rel.filename() == "manifest.json") {
    auto j = nlohmann::ordered_json::parse(bytes);
    j.erase("timing");
    return j.dump();
  }
  if (rel.filename() == "metrics.csv") {
    std::istringstream in(bytes);
    std::string out, line;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      if (cells.size() > 4) cells.erase(cells.begin() + 4);
      for (const auto& cell : cells) out += cell + ",";
      out += "\n";
    }
    return out;
  }
  return bytes;
}

Snapshot pipeline_snapshot(const fs::path& root) {
  fs::remove_all(root);
  const auto cli = [](std::vector<std::string> args) {
    args.insert(args.begin(), "tcs");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    if (cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err) != 0) {
      throw std::runtime_error("tcs " + args[1] + " failed: " + err.str());
    }
  };
  const std::string r = root.string();
  cli({"gen-data", "--classes", "4", "--dim", "12", "--separation", "1.0", "--seed", "3", "--splits", "train:40,test:30,ood:20",
       "--out", r + "/data"});
  cli({"train-teacher", "--data", r + "/data/train", "--arch", "mlp:24", "--epochs", "4", "--seed", "1", "--out", r + "/teacher"});
  cli({"train-teacher", "--data", r + "/data/train", "--arch", "mlp:10", "--epochs", "4", "--seed", "2", "--out", r + "/backbone"});
  cli({"extract", "--teacher", r + "/teacher", "--data", r + "/data/train", "--out", r + "/features.tcsf"});
  cli({"fit-cs", "--features", r + "/features.tcsf", "--out", r + "/cs"});
  const std::string common = "epochs = 4\nbatch_size = 16\nstudent_arch = mlp:8\ntrain_data = " + r + "/data/train\ntest_data = " +
                             r + "/data/test\nteacher = " + r + "/teacher\nstudent_backbone = " + r +
                             "/backbone\nood_data = " + r + "/data/ood\n";
  {
    std::ofstream(root / "run.cfg") << common;
  }
  cli({"distill", "--config", r + "/run.cfg", "--coordsys", r + "/cs", "--out", r + "/runs/tcs"});
  cli({"distill", "--config", r + "/run.cfg", "--set", "mode=logit_kd", "--out", r + "/runs/kd"});
  cli({"fewshot", "--config", r + "/run.cfg", "--set", "shots=5", "--out", r + "/runs/fewshot"});
  cli({"ablate", "--config", r + "/run.cfg", "--set", "shots=5", "--sources", "random_basis,out_of_domain", "--out",
       r + "/runs/ablate"});
  Snapshot snap;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root);
    snap[rel.string()] = normalized(rel, read_file_bytes(e.path()));
  }
  return snap;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "tcs_acceptance_pipeline";
  const Snapshot first = pipeline_snapshot(root);
  const Snapshot second = pipeline_snapshot(root);
  std::size_t differing = 0;
  std::string first_diff;
  for (const auto& [path, bytes] : first) {
    const auto it = second.find(path);
    if (it == second.end() || it->second != bytes) {
      if (differing++ == 0) first_diff = path;
    }
  }
  differing += second.size() > first.size() ? second.size() - first.size() : 0;
  const bool pass = differing == 0 && first.size() == second.size() && !first.empty();
  return {pass, fmt("%zu artifacts over gen-data/train-teacher/extract/fit-cs/distill/fewshot/ablate, %zu differ%s%s",
                    first.size(), differing, first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

}  // namespace
}  // namespace tcs::acceptance

// With arguments, only the listed criterion numbers run.
int main(int argc, char** argv) {
  using namespace tcs::acceptance;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"linalg oracles", linalg_oracles},
      {"gradient correctness", gradient_checks},
      {"fold equivalence", fold_equivalence},
      {"mask schedule contract", mask_schedule},
      {"single teacher pass", single_pass},
      {"kd direction (scratch / tcs- / tcs)", kd_direction},
      {"coordinate source ablation", coordinate_ablation},
      {"capacity gap robustness", capacity_gap},
      {"pipeline determinism", determinism},
  };
  int failures = 0, ran = 0;
  int index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    if (!only.empty() && std::find(only.begin(), only.end(), index) == only.end()) continue;
    ++ran;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
