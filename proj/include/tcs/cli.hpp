#pragma once

// Subcommand dispatcher for the `tcs` tool. Every stage reads and writes files only,
// so pipelines can be resumed from any persisted artifact.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tcs/checkpoint.hpp"
#include "tcs/config.hpp"
#include "tcs/coordinate_system.hpp"
#include "tcs/datasets.hpp"
#include "tcs/harness.hpp"
#include "tcs/tensor_io.hpp"
#include "tcs/training.hpp"

namespace tcs::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage_error = 1, runtime_error = 2 };

/// Output root for runs without an explicit --out.
inline fs::path output_root() {
  const char* env = std::getenv("TCS_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

/// Config file (if any) with `--set key=value` overrides applied in order.
inline TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream text;
    text << in.rdbuf();
    c.apply(parse_key_values(text.str(), path));
  }
  for (const auto& o : overrides) {
    auto [k, v] = parse_assignment(o, "--set");
    c.apply({{k, v}});
  }
  c.validate();
  return c;
}

/// Files named by a config, loaded into memory. Networks are owned here; `inputs` points at them.
struct LoadedInputs {
  std::unique_ptr<Network> teacher;
  std::unique_ptr<Network> student_backbone;
  RunInputs inputs;
};

inline LoadedInputs load_inputs(const TrainConfig& c) {
  c.validate_refs();
  LoadedInputs l;
  RunInputs& in = l.inputs;
  in.train = load_dataset(c.train_data);
  in.test = load_dataset(c.test_data);
  const std::size_t classes = std::max(in.train.class_count, in.test.class_count);
  in.train.class_count = in.test.class_count = classes;
  if (!c.teacher.empty()) {
    l.teacher = std::make_unique<Network>(load_network(c.teacher).net);
    in.teacher = l.teacher.get();
  }
  if (!c.teacher_features.empty()) {
    in.teacher_features = read_matrix(c.teacher_features);
    if (in.teacher_features->rows() != in.train.size()) {
      throw ShapeError("teacher_features has " + std::to_string(in.teacher_features->rows()) + " rows for " +
                       std::to_string(in.train.size()) + " training examples");
    }
  }
  if (!c.student_backbone.empty()) {
    l.student_backbone = std::make_unique<Network>(load_network(c.student_backbone).net);
    in.student_backbone = l.student_backbone.get();
  }
  if (!c.coordsys.empty()) in.coordsys = load_coordinate_system(c.coordsys);
  if (!c.ood_data.empty()) in.ood = load_dataset(c.ood_data);
  return l;
}

inline fs::path default_run_dir(const TrainConfig& c) {
  return output_root() / (c.mode + "-seed" + std::to_string(c.seed) + "-" + c.hash().substr(0, 8));
}

/// Writes a "running" manifest, trains, then replaces it with the complete one.
inline RunResult execute_run(const TrainConfig& c, const fs::path& dir, std::ostream& out) {
  const LoadedInputs loaded = load_inputs(c);
  fs::create_directories(dir);
  write_json(dir / "manifest.json", manifest_header(c, "running"));
  RunResult r = run(c, loaded.inputs);
  write_run_artifacts(dir, c, r);
  out << metrics_summary(r.metrics).dump() << "\n";
  return r;
}

/// One CSV row per manifest, in the order given.
inline std::string report_csv(const std::vector<std::string>& manifests) {
  std::string csv = "run,mode,coord_source,seed,accuracy,seconds_per_epoch,teacher_passes,config_hash\n";
  for (const auto& path : manifests) {
    const auto j = read_json(path);
    if (j.value("status", "") != "complete") throw FormatError(path + ": run is not complete");
    const auto& m = j.at("metrics");
    csv += fs::path(path).parent_path().filename().string() + "," + m.at("mode").get<std::string>() + "," +
           m.value("coord_source", "") + "," + std::to_string(m.at("seed").get<std::uint64_t>()) + "," +
           detail::format_double(m.at("accuracy").get<double>()) + "," +
           detail::format_double(j.at("timing").at("seconds_per_epoch").get<double>()) + "," +
           std::to_string(m.at("teacher_passes").get<std::size_t>()) + "," + m.at("config_hash").get<std::string>() +
           "\n";
  }
  return csv;
}

struct RunFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string coordsys;
};

inline void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--config", f.config, "key = value config file");
  app->add_option("--set", f.sets, "override a config key (key=value), repeatable");
  app->add_option("--out", f.out, "run directory (default: $TCS_OUT_ROOT/<mode>-seed<seed>-<hash>)");
  app->add_option("--coordsys", f.coordsys, "coordinate system directory from fit-cs");
}

inline TrainConfig run_config(const RunFlags& f) {
  std::vector<std::string> sets = f.sets;
  if (!f.coordsys.empty()) sets.push_back("coordsys=" + f.coordsys);
  return load_config(f.config, sets);
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Teacher coordinate system distillation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a seeded Gaussian mixture (or convert IDX files)");
  std::size_t classes = 10, dim = 64, latent_dim = 0;
  double separation = 0.4;
  std::uint64_t data_seed = 1;
  std::string splits = "train:600,test:200";
  std::vector<std::string> idx;
  std::string data_out;
  gen->add_option("--classes", classes)->check(CLI::PositiveNumber);
  gen->add_option("--dim", dim)->check(CLI::PositiveNumber);
  gen->add_option("--latent-dim", latent_dim, "class means in a shared subspace of this width (0: full)");
  gen->add_option("--separation", separation);
  gen->add_option("--seed", data_seed);
  gen->add_option("--splits", splits, "name:per_class list, each written as <out>/<name>");
  gen->add_option("--from-idx", idx, "IMAGES LABELS: convert IDX files instead of generating")->expected(2);
  gen->add_option("--out", data_out)->required();

  // train-teacher
  auto* teach = app.add_subcommand("train-teacher", "train a network with cross-entropy");
  std::string teach_data, arch = "mlp:256,256", teach_out;
  std::size_t teach_epochs = 30, teach_batch = 64;
  double teach_lr = 0.05, teach_wd = 5e-4;
  std::uint64_t teach_seed = 1;
  teach->add_option("--data", teach_data, "dataset prefix")->required();
  teach->add_option("--arch", arch);
  teach->add_option("--epochs", teach_epochs);
  teach->add_option("--batch-size", teach_batch)->check(CLI::PositiveNumber);
  teach->add_option("--lr", teach_lr);
  teach->add_option("--weight-decay", teach_wd);
  teach->add_option("--seed", teach_seed);
  teach->add_option("--out", teach_out, "checkpoint directory")->required();

  // extract
  auto* extract = app.add_subcommand("extract", "one forward pass: penultimate features to TCSF");
  std::string ex_model, ex_data, ex_out;
  extract->add_option("--teacher", ex_model, "checkpoint directory")->required();
  extract->add_option("--data", ex_data, "dataset prefix")->required();
  extract->add_option("--out", ex_out, "output .tcsf file")->required();

  // fit-cs
  auto* fitcs = app.add_subcommand("fit-cs", "fit a PCA coordinate system to teacher features");
  std::string cs_features, cs_out;
  std::uint64_t cs_seed = 0;
  fitcs->add_option("--features", cs_features)->required();
  fitcs->add_option("--seed", cs_seed, "seed for basis completion when samples < width");
  fitcs->add_option("--out", cs_out, "output directory")->required();

  // distill / fewshot
  RunFlags distill_flags, fewshot_flags, ablate_flags;
  auto* distill = app.add_subcommand("distill", "train a student (any mode) and write run artifacts");
  add_run_flags(distill, distill_flags);
  auto* fewshot = app.add_subcommand("fewshot", "frozen-backbone few-shot run (mode tcs_fewshot)");
  add_run_flags(fewshot, fewshot_flags);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "coordinate-source ablation, one run per source");
  std::vector<std::string> sources{"in_domain", "random_basis", "out_of_domain"};
  add_run_flags(ablate, ablate_flags);
  ablate->add_option("--sources", sources)->delimiter(',');

  // eval
  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  std::string ev_model, ev_data;
  eval->add_option("--model", ev_model, "checkpoint directory")->required();
  eval->add_option("--data", ev_data, "dataset prefix")->required();

  // report
  auto* report = app.add_subcommand("report", "CSV table over run manifests");
  std::vector<std::string> runs;
  std::string report_out;
  report->add_option("--runs", runs, "manifest.json files")->required();
  report->add_option("--out", report_out, "write CSV here instead of stdout");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([&](CLI::App* s) { return s->get_name() == name; });
    if (subs.empty()) {
      err << "usage error: unknown subcommand '" << name << "'\n";
      return usage_error;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage_error;
  }

  try {
    if (*gen) {
      if (!idx.empty()) {
        Dataset d = load_idx(idx[0], idx[1]);
        if (fs::path(data_out).has_parent_path()) fs::create_directories(fs::path(data_out).parent_path());
        save_dataset(data_out, d, Dtype::u8);
        out << d.size() << " examples, " << d.class_count << " classes -> " << data_out << "\n";
        return ok;
      }
      const GaussianMixture mix = latent_dim ? make_subspace_mixture(classes, dim, latent_dim, separation,
                                                                     Rng::derive(data_seed, 0), Rng::derive(data_seed, 1))
                                             : make_mixture(classes, dim, separation, Rng::derive(data_seed, 0));
      fs::create_directories(data_out);
      std::stringstream ss(splits);
      std::string item;
      std::uint64_t stream = 2;
      while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("--splits entries must be name:per_class, got '" + item + "'");
        const std::string name = trim(item.substr(0, colon));
        const std::size_t per_class = std::stoul(item.substr(colon + 1));
        save_dataset(fs::path(data_out) / name, mix.sample(per_class, Rng::derive(data_seed, stream++), name));
        out << name << ": " << per_class * classes << " examples\n";
      }
      return ok;
    }
    if (*teach) {
      const Dataset d = load_dataset(teach_data);
      TeacherTraining opt;
      opt.batch_size = teach_batch;
      opt.lr = teach_lr;
      opt.sgd.weight_decay = teach_wd;
      const Network net =
          train_teacher(d, ArchSpec::parse(arch, d.dim(), d.class_count, d.image), teach_epochs, teach_seed, opt).net;
      save_network(teach_out, net, teach_epochs, teach_seed);
      out << "train accuracy " << evaluate(net, d) << " -> " << teach_out << "\n";
      return ok;
    }
    if (*extract) {
      const Network net = load_network(ex_model).net;
      const Matrix f = net.forward_features(load_dataset(ex_data).inputs);
      if (fs::path(ex_out).has_parent_path()) fs::create_directories(fs::path(ex_out).parent_path());
      write_matrix(ex_out, f);
      out << f.rows() << " x " << f.cols() << " features, checksum " << file_checksum(ex_out) << "\n";
      return ok;
    }
    if (*fitcs) {
      const CoordinateSystem cs = fit_coordinate_system(read_matrix(cs_features), cs_seed);
      save_coordinate_system(cs_out, cs, {{"features", cs_features}, {"features_checksum", file_checksum(cs_features)}});
      out << "coordinate system of width " << cs.dim() << " from " << cs.sample_count << " samples\n";
      return ok;
    }
    if (*distill) {
      const TrainConfig c = run_config(distill_flags);
      execute_run(c, distill_flags.out.empty() ? default_run_dir(c) : fs::path(distill_flags.out), out);
      return ok;
    }
    if (*fewshot) {
      RunFlags f = fewshot_flags;
      f.sets.insert(f.sets.begin(), "mode=tcs_fewshot");
      const TrainConfig c = run_config(f);
      if (!c.fewshot()) throw ConfigError("fewshot runs require mode=tcs_fewshot");
      execute_run(c, f.out.empty() ? default_run_dir(c) : fs::path(f.out), out);
      return ok;
    }
    if (*ablate) {
      RunFlags f = ablate_flags;
      f.sets.insert(f.sets.begin(), "mode=tcs_fewshot");
      const TrainConfig base = run_config(f);
      const fs::path root = f.out.empty() ? output_root() / ("ablate-seed" + std::to_string(base.seed)) : fs::path(f.out);
      for (const auto& source : sources) {
        TrainConfig c = base;
        c.apply({{"coord_source", source}});
        c.validate();
        execute_run(c, root / source, out);
      }
      return ok;
    }
    if (*eval) {
      const Network net = load_network(ev_model).net;
      const Dataset d = load_dataset(ev_data, net.arch().classes);
      nlohmann::ordered_json j{{"model", ev_model}, {"data", ev_data}, {"examples", d.size()}, {"accuracy", evaluate(net, d)}};
      out << j.dump() << "\n";
      return ok;
    }
    if (*report) {
      const std::string csv = report_csv(runs);
      if (report_out.empty()) {
        out << csv;
      } else {
        write_file_bytes(report_out, csv);
      }
      return ok;
    }
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return runtime_error;
  }
  return usage_error;
}

}  // namespace tcs::cli
