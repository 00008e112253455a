// dgan: dataset synthesis, training, inference, evaluation, ablation and
// gradient checks.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
// 3 gradient check failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "dgan/dgan.hpp"

namespace fs = std::filesystem;
using namespace dgan;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

// One string-valued --flag per config key; applied after the file.
struct Overrides {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App& app, const std::vector<std::string>& skip = {}) {
    RunConfig scratch;
    for (const auto& f : config_fields(scratch)) {
      if (std::find(skip.begin(), skip.end(), f.key) != skip.end()) continue;
      auto* opt = app.add_option("--" + dashed(f.key), values[f.key], "override config key " + f.key);
      opt->group("Config overrides");
      options.emplace_back(f.key, opt);
    }
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) {
        try {
          set_config_value(cfg, key, values.at(key));
        } catch (const ConfigError& e) {
          throw ConfigError("--" + dashed(key) + ": " + e.what());
        }
      }
  }
};

RunConfig resolve_config(const std::string& path, const Overrides& o) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  o.apply(cfg);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<fs::path> layout_files(const std::vector<std::string>& args) {
  std::vector<fs::path> files;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(a))
        if (e.path().extension() == ".pgm") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(a);
    }
  }
  return files;
}

int run_gradcheck(const std::string& only, bool list) {
  const auto cases = gradcheck_cases();
  if (list) {
    for (const auto& c : cases) std::cout << c.name << "\n";
    return 0;
  }
  bool all_ok = true, matched = false;
  for (const auto& c : cases) {
    if (!only.empty() && c.name != only) continue;
    matched = true;
    const auto r = c.run();
    all_ok = all_ok && r.ok;
    std::printf("%-18s %-4s max_rel_error=%.3e checked=%zu%s%s\n", c.name.c_str(), r.ok ? "ok" : "FAIL",
                r.max_rel_error, r.checked, r.message.empty() ? "" : "  ", r.message.c_str());
  }
  if (!matched) throw ConfigError("unknown gradcheck op '" + only + "' (see --list)");
  return all_ok ? 0 : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising conditional GAN for layout-to-image synthesis"};
  app.require_subcommand(1);

  // synthesize-dataset
  auto* synth = app.add_subcommand("synthesize-dataset", "Render the synthetic street-scene corpus");
  DatasetSpec ds;
  std::string synth_out;
  synth->add_option("--seed", ds.seed, "master seed")->capture_default_str();
  synth->add_option("--count", ds.count, "number of scenes")->capture_default_str();
  synth->add_option("--size", ds.size, "image side in pixels")->capture_default_str();
  synth->add_option("--overlap-rate", ds.overlap_rate, "probability a car is placed over an earlier one")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--max-objects", ds.max_objects, "cars per scene cycle through 1..max")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train G and D");
  std::string train_config;
  bool resume = false;
  Overrides train_over;
  train_cmd->add_option("--config", train_config, "key = value config file");
  train_cmd->add_flag("--resume", resume, "continue from out_dir/checkpoint.dgz");
  train_over.attach(*train_cmd);

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Synthesize images from layouts");
  std::string infer_ck, infer_out;
  std::vector<std::string> infer_layouts;
  double infer_sigma = 0.0;
  std::uint64_t infer_seed = 0;
  infer_cmd->add_option("--checkpoint", infer_ck)->required();
  infer_cmd->add_option("--layout", infer_layouts, "PGM layout files or directories")->required();
  infer_cmd->add_option("--out", infer_out, "output directory")->required();
  infer_cmd->add_option("--sigma", infer_sigma, "input noise deviation")->capture_default_str();
  infer_cmd->add_option("--seed", infer_seed, "noise seed")->capture_default_str();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "P-SNR / MSE / R-MSE / SSIM over a manifest");
  std::string eval_ck, eval_manifest, eval_out;
  double eval_sigma = -1;
  eval_cmd->add_option("--checkpoint", eval_ck, "model; without it manifest rows are (prediction, target) images");
  eval_cmd->add_option("--manifest", eval_manifest)->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--sigma", eval_sigma, "input noise deviation (default: the checkpoint's noise_sigma)");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the ablation configurations");
  std::string ablate_config, ablate_out;
  bool grid = false;
  std::vector<std::string> ablate_only;
  Overrides ablate_over;
  ablate_cmd->add_option("--config", ablate_config, "base config file");
  ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
  ablate_cmd->add_flag("--grid", grid, "run the full 24-configuration grid instead of the named rows");
  ablate_cmd->add_option("--only", ablate_only, "restrict to these labels");
  ablate_over.attach(*ablate_cmd, {"out_dir"});

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  std::string gc_op;
  bool gc_list = false;
  gc_cmd->add_option("--op", gc_op, "check a single op");
  gc_cmd->add_flag("--list", gc_list, "list op names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      synthesize_dataset(ds, synth_out);
      std::cout << "wrote " << ds.count << " scenes to " << synth_out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto cfg = resolve_config(train_config, train_over);
      const auto corpus = load_corpus(cfg);
      std::cout << "train " << corpus.train.size() << " / held-out " << corpus.eval.size() << " scenes, "
                << corpus.input_channels(cfg.use_instance) << " input channels\n";
      const auto result = train(cfg, corpus, resume, &std::cout);
      std::cout << "checkpoint " << result.checkpoint.string() << "\n";
      return 0;
    }

    if (infer_cmd->parsed()) {
      auto model = load_model(load_checkpoint(infer_ck));
      fs::create_directories(infer_out);
      auto cfg = model.config;
      cfg.noise_sigma = infer_sigma;
      cfg.eval_seed = infer_seed;
      write_text(fs::path(infer_out) / "config.resolved", config_text(cfg));
      const auto files = layout_files(infer_layouts);
      for (std::size_t i = 0; i < files.size(); ++i) {
        const auto layout = read_label_map(files[i]);
        for (auto id : layout.ids)
          if (id >= model.classes.names.size())
            throw DimensionError(files[i].string() + ": class id " + std::to_string(id) + " but the checkpoint has " +
                                 std::to_string(model.classes.names.size()) + " classes");
        auto x = encode_layout(layout, model.classes.names.size(), model.complex_ids, cfg.use_instance);
        if (x.dim(0) != model.trainer->input_channels())
          throw DimensionError(files[i].string() + ": encodes to " + std::to_string(x.dim(0)) +
                               " channels, checkpoint expects " + std::to_string(model.trainer->input_channels()));
        if (x.dim(1) != cfg.image_size || x.dim(2) != cfg.image_size)
          throw DimensionError(files[i].string() + ": layout is " + std::to_string(x.dim(2)) + "x" +
                               std::to_string(x.dim(1)) + ", checkpoint expects " + std::to_string(cfg.image_size));
        Rng rng(derive_seed(infer_seed, i));
        const auto y = model.trainer->generate(add_noise(x, infer_sigma, rng));
        const auto dst = fs::path(infer_out) / (files[i].stem().string() + ".ppm");
        write_image(dst, y);
        std::cout << dst.string() << "\n";
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      fs::create_directories(eval_out);
      const auto entries = read_manifest(eval_manifest);
      MetricReport report;
      if (eval_ck.empty()) {
        for (const auto& e : entries) report.add(measure(read_image(e.layout), read_image(e.target), e.target.string()));
        report.finalize();
        write_text(fs::path(eval_out) / "config.resolved", "manifest = " + eval_manifest + "\n");
      } else {
        auto model = load_model(load_checkpoint(eval_ck));
        auto cfg = model.config;
        if (eval_sigma >= 0) cfg.noise_sigma = eval_sigma;
        write_text(fs::path(eval_out) / "config.resolved", config_text(cfg));
        const auto samples = load_samples(entries, model.classes, model.complex_ids, cfg.use_instance, cfg.image_size);
        if (samples.empty()) throw ContractError("metric report: empty corpus");
        report = evaluate_samples(*model.trainer, samples, cfg.noise_sigma, cfg.eval_seed).report;
      }
      std::ofstream csv(fs::path(eval_out) / "per_image.csv", std::ios::trunc);
      write_per_image_csv(csv, report);
      std::ostringstream summary;
      print_summary(summary, report, eval_ck.empty() ? "pairs" : fs::path(eval_ck).stem().string());
      write_text(fs::path(eval_out) / "summary.txt", summary.str());
      std::cout << summary.str();
      return 0;
    }

    if (ablate_cmd->parsed()) {
      auto cfg = resolve_config(ablate_config, ablate_over);
      cfg.out_dir = ablate_out;
      auto settings = grid ? grid_ablation_settings() : named_ablation_settings();
      if (!ablate_only.empty()) {
        std::vector<AblationSetting> kept;
        for (const auto& label : ablate_only) {
          auto it = std::find_if(settings.begin(), settings.end(), [&](const auto& s) { return s.label == label; });
          if (it == settings.end()) throw ConfigError("unknown ablation label '" + label + "'");
          kept.push_back(*it);
        }
        settings = kept;
      }
      fs::create_directories(ablate_out);
      write_text(fs::path(ablate_out) / "config.resolved", config_text(cfg));
      const auto rows = ablate(cfg, settings, &std::cout);
      std::ofstream csv(fs::path(ablate_out) / "ablation.csv", std::ios::trunc);
      write_ablation_csv(csv, rows);
      print_ablation(std::cout, rows);
      return 0;
    }

    if (gc_cmd->parsed()) return run_gradcheck(gc_op, gc_list);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
