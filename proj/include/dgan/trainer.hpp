#pragma once

// Alternating D/G training, held-out evaluation, checkpoint/resume and the
// ablation harness.
//
// Seed schedule (all via derive_seed):
//   model init        derive_seed(seed, kInitStream)
//   epoch e shuffle   derive_seed(derive_seed(seed, kShuffleStream), e)
//   epoch e, batch b  derive_seed(derive_seed(seed, kStepStream) ^ e, b)  jitter, noise, alpha
//   fixed noise       derive_seed(sample_seed, kNoiseStream)               when noise_per_step = false
//   evaluation        derive_seed(eval_seed, i) for the i-th held-out sample
// Every stream restarts from the epoch index, so a resumed run replays the
// same draws as an uninterrupted one.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dgan/adam.hpp"
#include "dgan/checkpoint.hpp"
#include "dgan/config.hpp"
#include "dgan/data.hpp"
#include "dgan/losses.hpp"
#include "dgan/metrics.hpp"
#include "dgan/models.hpp"

namespace dgan {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kStepStream = 3;
constexpr std::uint64_t kNoiseStream = 4;

constexpr const char* kMetricsHeader = "epoch,adv_d,adv_g,l1,perturbed,cascade,psnr,mse,rmse,ssim";
constexpr const char* kHeldOutHeader = "epoch,l1,psnr,mse,rmse,ssim";
constexpr const char* kCheckpointFile = "checkpoint.dgz";

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Data

struct Sample {
  std::string name;
  Tensor input;   // [C, H, W] encoded layout, noise-free
  Tensor target;  // [3, H, W] in [-1, 1]
  std::uint64_t seed = 0;
};

struct Corpus {
  ClassTable classes;
  std::vector<std::size_t> complex_ids;
  std::vector<Sample> train, eval;

  std::size_t input_channels(bool use_instance) const {
    return classes.names.size() + (use_instance ? complex_ids.size() : 0);
  }
};

inline std::vector<std::size_t> resolve_complex_ids(const ClassTable& table, const std::vector<std::string>& names) {
  std::vector<std::size_t> ids;
  for (const auto& n : names) ids.push_back(table.id_of(n));
  return ids;
}

inline std::string class_table_text(const ClassTable& t) {
  std::string s;
  for (std::size_t i = 0; i < t.names.size(); ++i) s += std::to_string(i) + "\t" + t.names[i] + "\n";
  return s;
}

inline ClassTable parse_class_table_text(const std::string& text) {
  ClassTable t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    t.names.push_back(line.substr(tab + 1));
  }
  return t;
}

inline Sample load_sample(const ManifestEntry& e, const ClassTable& classes, const std::vector<std::size_t>& complex_ids,
                          bool use_instance, std::size_t image_size) {
  const auto layout = read_label_map(e.layout);
  Sample s{e.target.string(), encode_layout(layout, classes.names.size(), complex_ids, use_instance),
           read_image(e.target), e.seed};
  if (s.input.dim(1) != s.target.dim(1) || s.input.dim(2) != s.target.dim(2))
    throw DimensionError(e.layout.string() + " and " + e.target.string() + " differ in size");
  if (s.target.dim(1) != image_size || s.target.dim(2) != image_size)
    throw DimensionError(e.target.string() + " is " + std::to_string(s.target.dim(2)) + "x" +
                         std::to_string(s.target.dim(1)) + ", config expects image_size " + std::to_string(image_size));
  return s;
}

inline std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, const ClassTable& classes,
                                        const std::vector<std::size_t>& complex_ids, bool use_instance,
                                        std::size_t image_size) {
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_sample(e, classes, complex_ids, use_instance, image_size));
  return out;
}

/// Class table is `classes.tsv` beside the training manifest.
inline Corpus load_corpus(const RunConfig& cfg) {
  if (cfg.train_manifest.empty()) throw ConfigError("train_manifest is not set");
  const std::filesystem::path manifest(cfg.train_manifest);
  Corpus c;
  c.classes = read_class_table(manifest.parent_path() / "classes.tsv");
  c.complex_ids = resolve_complex_ids(c.classes, cfg.complex_classes);
  auto entries = read_manifest(manifest);
  std::vector<ManifestEntry> eval_entries;
  if (!cfg.eval_manifest.empty()) {
    eval_entries = read_manifest(cfg.eval_manifest);
  } else if (cfg.holdout > 0) {
    if (cfg.holdout >= entries.size())
      throw ConfigError("holdout " + std::to_string(cfg.holdout) + " leaves no training scenes out of " +
                        std::to_string(entries.size()));
    eval_entries.assign(entries.end() - static_cast<std::ptrdiff_t>(cfg.holdout), entries.end());
    entries.resize(entries.size() - cfg.holdout);
  }
  c.train = load_samples(entries, c.classes, c.complex_ids, cfg.use_instance, cfg.image_size);
  c.eval = load_samples(eval_entries, c.classes, c.complex_ids, cfg.use_instance, cfg.image_size);
  return c;
}

/// [C, H, W] tensors -> [B, C, H, W].
inline Tensor stack_batch(const std::vector<Tensor>& items) {
  const auto& s = items.at(0).shape();
  std::vector<float> v;
  v.reserve(items.size() * items[0].numel());
  for (const auto& t : items) {
    if (!(t.shape() == s)) throw DimensionError("stack_batch: " + t.shape().str() + " vs " + s.str());
    v.insert(v.end(), t.data().begin(), t.data().end());
  }
  return Tensor(Shape{items.size(), s[0], s[1], s[2]}, std::move(v));
}

// ---------------------------------------------------------------------------
// Model set

inline GeneratorConfig generator_config(const RunConfig& c, std::size_t input_channels) {
  GeneratorConfig g;
  g.input_channels = input_channels;
  g.base_width = c.g_base_width;
  g.num_res_blocks = c.g_res_blocks;
  g.image_size = c.image_size;
  g.skips = c.g_skips;
  return g;
}

inline DiscriminatorConfig discriminator_config(const RunConfig& c, std::size_t input_channels) {
  DiscriminatorConfig d;
  d.condition_channels = input_channels;
  d.base_width = c.d_base_width;
  d.layers = c.d_layers;
  return d;
}

inline CascadeNetConfig cascade_config(const RunConfig& c) {
  CascadeNetConfig p;
  p.widths = c.phi_widths;
  p.seed = c.phi_seed;
  return p;
}

inline LossWeights loss_weights(const RunConfig& c) { return {c.gamma, c.theta_p, c.sigma_c, c.cascade_lambda}; }

inline AdamConfig adam_config(const RunConfig& c) { return {c.lr, c.beta1, c.beta2, c.adam_eps}; }

/// Replaces Φ's weights with `level<n>.weight` / `level<n>.bias` entries.
inline void load_cascade_weights(CascadeNet<float>& phi, const std::filesystem::path& path) {
  restore_tensors(load_checkpoint(path), phi.parameters());
}

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::size_t input_channels)
      : cfg_((cfg.validate(), cfg)),
        input_channels_(input_channels),
        init_rng_(derive_seed(cfg.seed, kInitStream)),
        g_(generator_config(cfg, input_channels), init_rng_),
        d_(discriminator_config(cfg, input_channels), init_rng_),
        phi_(cascade_config(cfg)),
        g_opt_(g_.parameters(), adam_config(cfg)),
        d_opt_(d_.parameters(), adam_config(cfg)),
        weights_(loss_weights(cfg)) {
    weights_.validate();
    lambda_ = weights_.level_weights(phi_.levels());
    if (!cfg.phi_weights.empty()) load_cascade_weights(phi_, cfg.phi_weights);
  }

  const RunConfig& config() const { return cfg_; }
  std::size_t input_channels() const { return input_channels_; }
  Generator<float>& generator() { return g_; }
  Discriminator<float>& discriminator() { return d_; }
  CascadeNet<float>& cascade() { return phi_; }
  Adam<float>& generator_optimizer() { return g_opt_; }
  Adam<float>& discriminator_optimizer() { return d_opt_; }
  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }

  /// D update on (condition, target) against a detached fake. Fills adv_d,
  /// perturbed and total_d.
  void discriminator_step(const Tensor& condition, const Tensor& target, const Tensor& fake, Rng& rng,
                          LossBundle& out) {
    const auto fake_const = fake.detach();
    d_.set_requires_grad(true);
    d_.set_mode(BatchNormMode::kTrain);
    d_opt_.zero_grad();
    const auto adv = adversarial_losses(d_.score(condition, target), d_.score(condition, fake_const), cfg_.saturating_g);
    Tensor lp;
    if (cfg_.use_perturbed) lp = perturbed_loss(d_, condition, perturb_mix(fake_const, target, rng));
    const auto total = discriminator_objective(adv.d, lp, weights_);
    out.adv_d = adv.d.item();
    out.perturbed = lp.defined() ? lp.item() : 0.0f;
    out.total_d = total.item();
    check_finite(out, "discriminator");
    backward(total);
    d_opt_.step();
  }

  /// G update through a frozen D (batch statistics, no running-stat
  /// update, no parameter grads). Fills adv_g, l1, cascade and total_g.
  void generator_step(const Tensor& condition, const Tensor& target, const Tensor& fake, LossBundle& out) {
    d_.set_requires_grad(false);
    d_.set_mode(BatchNormMode::kBatchStats);
    g_opt_.zero_grad();
    const auto adv_g = generator_adversarial_loss(d_.score(condition, fake), cfg_.saturating_g);
    const auto l1 = l1_loss(fake, target);
    Tensor lc;
    if (cfg_.use_cascade) lc = cascade_loss(phi_, fake, target, lambda_);
    const auto total = generator_objective(adv_g, l1, lc, weights_);
    out.adv_g = adv_g.item();
    out.l1 = l1.item();
    out.cascade = lc.defined() ? lc.item() : 0.0f;
    out.total_g = total.item();
    check_finite(out, "generator");
    backward(total);
    d_.set_requires_grad(true);
    g_opt_.step();
  }

  /// One D step then one G step on an already noised batch.
  LossBundle train_step(const Tensor& input, const Tensor& target, Rng& rng) {
    g_.set_mode(BatchNormMode::kTrain);
    LossBundle b;
    const auto fake = g_.forward(input);
    discriminator_step(input, target, fake, rng, b);
    generator_step(input, target, fake, b);
    return b;
  }

  /// Inference pass without a graph.
  Tensor generate(const Tensor& input) {
    NoGradGuard guard;
    g_.set_mode(cfg_.bn_inference == "running" ? BatchNormMode::kEval : BatchNormMode::kBatchStats);
    auto out = g_.forward(input.rank() == 3 ? input.reshape(Shape{1, input.dim(0), input.dim(1), input.dim(2)}) : input);
    g_.set_mode(BatchNormMode::kTrain);
    return out;
  }

  /// Jitter and noise for one sample, drawn from `rng` in that order.
  std::pair<Tensor, Tensor> prepare(const Sample& s, Rng& rng) const {
    Tensor x = s.input, y = s.target;
    if (cfg_.jitter_size > cfg_.image_size)
      std::tie(x, y) = jitter_crop(x, y, cfg_.image_size, cfg_.jitter_size, rng);
    if (cfg_.noise_per_step) {
      x = add_noise(x, cfg_.noise_sigma, rng);
    } else {
      Rng fixed(derive_seed(s.seed, kNoiseStream));
      x = add_noise(x, cfg_.noise_sigma, fixed);
    }
    return {x, y};
  }

  /// Runs epoch `epoch() + 1` over `train`; returns mean losses.
  LossBundle run_epoch(const std::vector<Sample>& train) {
    if (train.empty()) throw TrainingError("training split is empty");
    const std::uint64_t e = epoch_ + 1;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(derive_seed(cfg_.seed, kShuffleStream), e));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    const std::uint64_t step_base = derive_seed(cfg_.seed, kStepStream) ^ e;
    double sums[7] = {0, 0, 0, 0, 0, 0, 0};
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      Rng rng(derive_seed(step_base, steps));
      std::vector<Tensor> xs, ys;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg_.batch_size); ++k) {
        auto [x, y] = prepare(train[order[k]], rng);
        xs.push_back(std::move(x));
        ys.push_back(std::move(y));
      }
      LossBundle b;
      try {
        b = train_step(stack_batch(xs), stack_batch(ys), rng);
      } catch (const TrainingError& err) {
        throw TrainingError("epoch " + std::to_string(e) + " step " + std::to_string(steps) + " (first sample " +
                            train[order[start]].name + "): " + err.what());
      }
      const float parts[7] = {b.adv_d, b.adv_g, b.l1, b.perturbed, b.cascade, b.total_g, b.total_d};
      for (int k = 0; k < 7; ++k) sums[k] += parts[k];
      ++steps;
    }
    epoch_ = e;
    auto mean = [&](int k) { return static_cast<float>(sums[k] / static_cast<double>(steps)); };
    return {mean(0), mean(1), mean(2), mean(3), mean(4), mean(5), mean(6)};
  }

  /// Named tensors for every model, optimizer and bookkeeping value.
  Checkpoint checkpoint(const ClassTable& classes, const std::vector<std::size_t>& complex_ids) const {
    Checkpoint ck;
    RunConfig snapshot = cfg_;
    snapshot.out_dir.clear();
    ck.add_text("meta/config", config_text(snapshot));
    ck.add_text("meta/classes", class_table_text(classes));
    std::vector<float> ids(complex_ids.begin(), complex_ids.end());
    ids.insert(ids.begin(), static_cast<float>(input_channels_));
    const Shape channels_shape{ids.size()};
    ck.entries.push_back({"meta/channels", Tensor(channels_shape, std::move(ids))});
    ck.entries.push_back({"meta/epoch", Tensor::scalar(static_cast<float>(epoch_))});
    ck.add_all(g_.parameters(), "g/");
    ck.add_all(g_.buffers(), "g_buf/");
    ck.add_all(d_.parameters(), "d/");
    ck.add_all(d_.buffers(), "d_buf/");
    ck.add_all(phi_.parameters(), "phi/");
    ck.add_all(g_opt_.state("adam_g/"));
    ck.entries.push_back({"adam_g/t", Tensor::scalar(static_cast<float>(g_opt_.steps()))});
    ck.add_all(d_opt_.state("adam_d/"));
    ck.entries.push_back({"adam_d/t", Tensor::scalar(static_cast<float>(d_opt_.steps()))});
    return ck;
  }

  void restore(const Checkpoint& ck) {
    restore_tensors(ck, g_.parameters(), "g/");
    restore_tensors(ck, g_.buffers(), "g_buf/");
    restore_tensors(ck, d_.parameters(), "d/");
    restore_tensors(ck, d_.buffers(), "d_buf/");
    restore_tensors(ck, phi_.parameters(), "phi/");
    restore_tensors(ck, g_opt_.state("adam_g/"));
    restore_tensors(ck, d_opt_.state("adam_d/"));
    g_opt_.set_steps(static_cast<std::uint64_t>(ck.at("adam_g/t").item()));
    d_opt_.set_steps(static_cast<std::uint64_t>(ck.at("adam_d/t").item()));
    epoch_ = static_cast<std::size_t>(ck.at("meta/epoch").item());
  }

 private:
  static void check_finite(const LossBundle& b, const char* phase) {
    const float v[7] = {b.adv_d, b.adv_g, b.l1, b.perturbed, b.cascade, b.total_g, b.total_d};
    for (float x : v)
      if (!std::isfinite(x)) {
        std::ostringstream os;
        os << "non-finite loss in " << phase << " step: adv_d=" << b.adv_d << " adv_g=" << b.adv_g
           << " l1=" << b.l1 << " perturbed=" << b.perturbed << " cascade=" << b.cascade;
        throw TrainingError(os.str());
      }
  }

  RunConfig cfg_;
  std::size_t input_channels_;
  Rng init_rng_;
  Generator<float> g_;
  Discriminator<float> d_;
  CascadeNet<float> phi_;
  Adam<float> g_opt_, d_opt_;
  LossWeights weights_;
  std::vector<double> lambda_;
  std::size_t epoch_ = 0;
};

/// Rebuilds a trainer (config, class table, weights) from a checkpoint.
struct LoadedModel {
  RunConfig config;
  ClassTable classes;
  std::vector<std::size_t> complex_ids;
  std::unique_ptr<Trainer> trainer;
};

inline LoadedModel load_model(const Checkpoint& ck) {
  LoadedModel m;
  m.config = parse_config_text(ck.text("meta/config"));
  m.config.phi_weights.clear();  // Φ comes from the checkpoint itself
  m.classes = parse_class_table_text(ck.text("meta/classes"));
  const auto ch = ck.at("meta/channels").data();
  for (std::size_t i = 1; i < ch.size(); ++i) m.complex_ids.push_back(static_cast<std::size_t>(ch[i]));
  m.trainer = std::make_unique<Trainer>(m.config, static_cast<std::size_t>(ch[0]));
  m.trainer->restore(ck);
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

struct HeldOutResult {
  double l1 = 0;  // mean |G(x) - y| in [-1, 1] units
  MetricReport report;
};

/// Runs G over `samples` with noise sigma drawn from derive_seed(seed, i).
inline HeldOutResult evaluate_samples(Trainer& t, const std::vector<Sample>& samples, double sigma,
                                      std::uint64_t seed) {
  HeldOutResult r;
  if (samples.empty()) return r;
  double l1 = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const auto& s = samples[i];
    const auto out = t.generate(add_noise(s.input, sigma, rng)).reshape(s.target.shape());
    double acc = 0;
    auto a = out.data();
    auto b = s.target.data();
    for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs(static_cast<double>(a[k]) - b[k]);
    l1 += acc / static_cast<double>(a.size());
    r.report.add(measure(out, s.target, s.name));
  }
  r.l1 = l1 / static_cast<double>(samples.size());
  r.report.finalize();
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  LossBundle losses;
  HeldOutResult held_out;
};

struct TrainResult {
  double initial_l1 = 0;  // held-out L1 of the model before its first epoch (NaN when resumed)
  std::vector<EpochRecord> epochs;
  std::filesystem::path checkpoint;
};

namespace detail {

inline std::string csv_number(double v) { return format_metric(v); }

inline void keep_csv_rows_through(const std::filesystem::path& path, const char* header, std::size_t last_epoch) {
  std::vector<std::string> keep{header};
  if (std::ifstream in(path); in && last_epoch > 0) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= last_epoch) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : keep) out << l << '\n';
}

inline void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << line << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

inline std::string held_out_cells(const HeldOutResult& h, bool present) {
  if (!present) return ",,,";
  return csv_number(h.report.psnr) + "," + csv_number(h.report.mse) + "," + csv_number(h.report.rmse) + "," +
         csv_number(h.report.ssim);
}

}  // namespace detail

/// Trains into cfg.out_dir, writing config.resolved, metrics.csv (training
/// loss means + held-out metrics per epoch), heldout.csv (held-out L1 and
/// metrics, including epoch 0) and checkpoint.dgz.
inline TrainResult train(const RunConfig& cfg, const Corpus& corpus, bool resume = false,
                         std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const fs::path out(cfg.out_dir);
  const fs::path ck_path = out / kCheckpointFile;
  const fs::path metrics_path = out / "metrics.csv";
  const fs::path held_path = out / "heldout.csv";
  if (resume && !fs::exists(ck_path)) throw IoError("cannot resume: no checkpoint at " + ck_path.string());
  fs::create_directories(out);
  {
    std::ofstream resolved(out / "config.resolved", std::ios::trunc);
    if (!resolved) throw IoError("cannot write " + (out / "config.resolved").string());
    resolved << config_text(cfg);
  }

  Trainer t(cfg, corpus.input_channels(cfg.use_instance));
  TrainResult result;
  result.checkpoint = ck_path;
  const bool has_eval = !corpus.eval.empty();
  auto save = [&] { save_checkpoint(ck_path, t.checkpoint(corpus.classes, corpus.complex_ids)); };

  if (resume) {
    t.restore(load_checkpoint(ck_path));
    detail::keep_csv_rows_through(metrics_path, kMetricsHeader, t.epoch());
    detail::keep_csv_rows_through(held_path, kHeldOutHeader, t.epoch());
    result.initial_l1 = std::nan("");
    if (log) *log << "resuming " << out.string() << " after epoch " << t.epoch() << "\n";
  } else {
    detail::keep_csv_rows_through(metrics_path, kMetricsHeader, 0);
    detail::keep_csv_rows_through(held_path, kHeldOutHeader, 0);
    if (has_eval) {
      const auto h = evaluate_samples(t, corpus.eval, cfg.noise_sigma, cfg.eval_seed);
      result.initial_l1 = h.l1;
      detail::append_line(held_path, "0," + detail::csv_number(h.l1) + "," + detail::held_out_cells(h, true));
      if (log) *log << "epoch 0 held-out l1 " << h.l1 << "\n";
    }
    save();
  }

  while (t.epoch() < cfg.epochs) {
    const auto started = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.losses = t.run_epoch(corpus.train);
    rec.epoch = t.epoch();
    if (has_eval) rec.held_out = evaluate_samples(t, corpus.eval, cfg.noise_sigma, cfg.eval_seed);
    const auto& L = rec.losses;
    detail::append_line(metrics_path, std::to_string(rec.epoch) + "," + detail::csv_number(L.adv_d) + "," +
                                          detail::csv_number(L.adv_g) + "," + detail::csv_number(L.l1) + "," +
                                          detail::csv_number(L.perturbed) + "," + detail::csv_number(L.cascade) +
                                          "," + detail::held_out_cells(rec.held_out, has_eval));
    if (has_eval)
      detail::append_line(held_path, std::to_string(rec.epoch) + "," + detail::csv_number(rec.held_out.l1) + "," +
                                         detail::held_out_cells(rec.held_out, true));
    if ((cfg.checkpoint_every > 0 && rec.epoch % cfg.checkpoint_every == 0) || rec.epoch == cfg.epochs) save();
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      *log << "epoch " << rec.epoch << "/" << cfg.epochs << " adv_d " << L.adv_d << " adv_g " << L.adv_g << " l1 "
           << L.l1;
      if (has_eval) *log << " | held-out l1 " << rec.held_out.l1 << " psnr " << rec.held_out.report.psnr;
      *log << " (" << std::fixed << std::setprecision(1) << secs << "s)" << std::defaultfloat
           << std::setprecision(6) << "\n";
    }
    result.epochs.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationSetting {
  std::string label;
  double sigma = 0;
  bool perturbed = false, cascade = false, instance = false;
};

/// The ten named configurations, in table order.
inline std::vector<AblationSetting> named_ablation_settings() {
  return {
      {"Z0.1", 0.1, false, false, false},       {"Z0.04", 0.04, false, false, false},
      {"Z0.4", 0.4, false, false, false},       {"L_p", 0.0, true, false, false},
      {"L_c", 0.0, false, true, false},         {"L_c+L_p", 0.0, true, true, false},
      {"L_c+Ins.", 0.0, false, true, true},     {"L_p+Ins.", 0.0, true, false, true},
      {"L_c+L_p+Ins.", 0.0, true, true, true},  {"Ours", 0.1, true, true, true},
  };
}

/// {Z0.04, Z0.1, Z0.4} x {±L_p} x {±L_c} x {±Ins.}
inline std::vector<AblationSetting> grid_ablation_settings() {
  std::vector<AblationSetting> out;
  for (double sigma : {0.04, 0.1, 0.4})
    for (int mask = 0; mask < 8; ++mask) {
      AblationSetting s;
      s.sigma = sigma;
      s.perturbed = mask & 1;
      s.cascade = mask & 2;
      s.instance = mask & 4;
      std::ostringstream label;
      label << "Z" << sigma;
      if (s.cascade) label << "+L_c";
      if (s.perturbed) label << "+L_p";
      if (s.instance) label << "+Ins.";
      s.label = label.str();
      out.push_back(s);
    }
  return out;
}

struct AblationRow {
  std::string label;
  double held_out_l1 = 0;
  double psnr = 0, mse = 0, rmse = 0, ssim = 0;
};

inline std::string ablation_dir_name(const std::string& label) {
  std::string s;
  for (char c : label) s.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? c : '_');
  while (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

inline RunConfig ablation_config(const RunConfig& base, const AblationSetting& s) {
  RunConfig c = base;
  c.noise_sigma = s.sigma;
  c.use_perturbed = s.perturbed;
  c.use_cascade = s.cascade;
  c.use_instance = s.instance;
  c.out_dir = (std::filesystem::path(base.out_dir) / ablation_dir_name(s.label)).string();
  return c;
}

/// Trains and evaluates every setting on the held-out split; each run lives
/// in out_dir/<label>.
inline std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<AblationSetting>& settings,
                                       std::ostream* log = nullptr) {
  std::vector<AblationRow> rows;
  for (const auto& s : settings) {
    const auto cfg = ablation_config(base, s);
    const auto corpus = load_corpus(cfg);
    if (corpus.eval.empty()) throw ConfigError("ablation needs a held-out split (holdout or eval_manifest)");
    if (log) *log << "== " << s.label << " ==\n";
    auto result = train(cfg, corpus, false, log);
    HeldOutResult h;
    if (!result.epochs.empty()) {
      h = result.epochs.back().held_out;
    } else {
      Trainer t(cfg, corpus.input_channels(cfg.use_instance));
      h = evaluate_samples(t, corpus.eval, cfg.noise_sigma, cfg.eval_seed);
    }
    rows.push_back({s.label, h.l1, h.report.psnr, h.report.mse, h.report.rmse, h.report.ssim});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "label,psnr,mse,rmse,ssim,heldout_l1\n";
  for (const auto& r : rows)
    out << r.label << ',' << format_metric(r.psnr) << ',' << format_metric(r.mse) << ',' << format_metric(r.rmse)
        << ',' << format_metric(r.ssim) << ',' << format_metric(r.held_out_l1) << '\n';
}

inline void print_ablation(std::ostream& out, const std::vector<AblationRow>& rows) {
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %12s %12s %12s %12s\n", "Method", "P-SNR", "MSE", "R-MSE", "SSIM");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-24s %12s %12s %12s %12s\n", r.label.c_str(), format_metric(r.psnr).c_str(),
                  format_metric(r.mse).c_str(), format_metric(r.rmse).c_str(), format_metric(r.ssim).c_str());
    out << line;
  }
}

}  // namespace dgan
