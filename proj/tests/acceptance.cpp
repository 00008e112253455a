// Acceptance runner: one [PASS]/[FAIL] line per criterion.
//
//   acceptance            run all eleven
//   acceptance --only N   run criterion N
//
// Criteria 9 to 11 drive the dgan CLI in ./acceptance_work.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "dgan/dgan.hpp"

using namespace dgan;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_dir(const std::string& name) {
  auto p = fs::current_path() / "acceptance_work" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Runs a shell command in `cwd`; output goes to `log`. Returns the exit code.
int shell(const std::string& cmd, const fs::path& cwd, const fs::path& log) {
  const std::string full = "cd '" + cwd.string() + "' && " + cmd + " > '" + log.string() + "' 2>&1";
  const int status = std::system(full.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int cli(const std::string& args, const fs::path& cwd, const std::string& log_name) {
  return shell(std::string("'") + DGAN_CLI + "' " + args, cwd, cwd / log_name);
}

std::string desk_config() { return std::string(DGAN_SOURCE_DIR) + "/configs/desk.cfg"; }

// The 240-scene seed-42 corpus under cwd/data/desk, as desk.cfg expects.
bool synthesize_desk(const fs::path& cwd, Outcome& o) {
  const int rc = cli("synthesize-dataset --seed 42 --count 240 --size 64 --out data/desk", cwd, "synthesize.log");
  o.require(rc == 0, "synthesize-dataset exit " + std::to_string(rc));
  return rc == 0;
}

// Rows of a CSV with a header line, split on commas.
std::vector<std::vector<std::string>> read_csv(const fs::path& p, std::string* header = nullptr) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (header) *header = line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

Tensor random_tensor(Shape s, Rng& r, float lo = -1, float hi = 1) {
  std::vector<float> v(s.numel());
  for (auto& x : v) x = static_cast<float>(r.uniform(lo, hi));
  return Tensor(s, std::move(v));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

std::vector<std::vector<float>> snapshot(const ParamList<float>& params, bool grads = false) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) {
    if (grads) {
      const auto g = p.tensor.grad();
      out.emplace_back(g.begin(), g.end());
    } else {
      out.push_back(p.tensor.values());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome criterion_1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t n = 0;
  for (const auto& c : gradcheck_cases()) {
    const auto r = c.run();
    ++n;
    worst = std::max(worst, r.max_rel_error);
    o.require(r.ok && r.max_rel_error < 1e-3, c.name + " max_rel_error " + fmt("%.3e", r.max_rel_error) + " " +
                                                  r.message);
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120, "runtime " + fmt("%.1f", secs) + "s >= 120s");
  o.note(std::to_string(n) + " ops, worst rel error " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + "s");
  return o;
}

Outcome criterion_2() {
  Outcome o;
  Rng rng(2);
  for (std::size_t ch : {1, 4, 16}) {
    auto p = ResidualBlockParams<float>::make(ch, rng);
    for (auto* t : {&p.conv1.weight, &p.conv1.bias, &p.conv2.weight, &p.conv2.bias, &p.bn1.gamma, &p.bn1.beta,
                    &p.bn2.gamma, &p.bn2.beta})
      std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0f);
    for (auto mode : {BatchNormMode::kTrain, BatchNormMode::kEval}) {
      p.set_mode(mode);
      const auto x = random_tensor({2, ch, 8, 8}, rng, -3, 3);
      o.require(same_bits(residual_block(x, p), x), "identity at " + std::to_string(ch) + " channels");
    }
  }
  o.note("zero branch reproduces the input bit-exactly (train and eval BN)");
  return o;
}

Outcome criterion_3() {
  Outcome o;
  Rng rng(3);
  const auto fake = random_tensor({3, 3, 8, 8}, rng), real = random_tensor({3, 3, 8, 8}, rng);
  o.require(same_bits(perturb_mix(fake, real, std::vector<float>{0, 0, 0}), real), "alpha=0 equals real");
  o.require(same_bits(perturb_mix(fake, real, std::vector<float>{1, 1, 1}), fake), "alpha=1 equals fake");
  const auto mix = perturb_mix(fake, real, std::vector<float>{0.25f, 0.25f, 0.25f});
  double worst = 0;
  for (std::size_t i = 0; i < mix.numel(); ++i)
    worst = std::max(worst, std::abs(mix[i] - (0.25 * fake[i] + 0.75 * real[i])));
  o.require(worst <= 1e-7, "alpha=0.25 error " + fmt("%.2e", worst));
  o.note("alpha=0.25 max error " + fmt("%.2e", worst));
  return o;
}

Outcome criterion_4() {
  Outcome o;
  const LossWeights w;  // gamma 100, theta_p 1, sigma_c 1
  o.require(w.gamma == 100 && w.theta_p == 1 && w.sigma_c == 1, "default weights");

  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    const float adv = static_cast<float>(rng.uniform(0, 3)), l1 = static_cast<float>(rng.uniform(0, 1)),
                lc = static_cast<float>(rng.uniform(0, 1));
    const float expected = (adv + 100.0f * l1) + lc;
    const auto t = generator_objective(Tensor::scalar(adv), Tensor::scalar(l1), Tensor::scalar(lc), w).item();
    o.require(t == expected && total_objective(0, adv, l1, 0, lc, w).total_g == expected, "random composition");
  }

  // Inside a real training step on a scene.
  RunConfig cfg;
  cfg.image_size = 32;
  cfg.jitter_size = 32;
  cfg.g_base_width = 4;
  cfg.g_res_blocks = 2;
  cfg.d_base_width = 8;
  cfg.d_layers = 3;
  cfg.phi_widths = {4, 4, 8, 8, 8};
  Trainer t(cfg, 5);
  const auto scene = generate_scene({11, 32, 3, 0.5});
  const auto x = encode_layout(scene.layout, 4, {3}, true).reshape({1, 5, 32, 32});
  const auto y = image_to_tensor(scene.target).reshape({1, 3, 32, 32});
  for (int step = 0; step < 5; ++step) {
    const auto b = t.train_step(x, y, rng);
    o.require(b.total_g == (b.adv_g + 100.0f * b.l1) + b.cascade, "train_step total_g at step " + std::to_string(step));
    if (step == 4)
      o.note("step total_g " + fmt("%.6f", b.total_g) + " = adv_g " + fmt("%.6f", b.adv_g) + " + 100*l1 " +
             fmt("%.6f", b.l1) + " + cascade " + fmt("%.6f", b.cascade));
  }
  return o;
}

Outcome criterion_5() {
  Outcome o;
  const auto a = adversarial_losses(Tensor::scalar(0.9f), Tensor::scalar(0.1f)).d.item();
  const auto b = adversarial_losses(Tensor::scalar(0.5f), Tensor::scalar(0.5f)).d.item();
  o.require(std::abs(a - 0.2107) <= 1e-4, "adv_d(0.9, 0.1) = " + fmt("%.6f", a));
  o.require(std::abs(b - 1.3863) <= 1e-4, "adv_d(0.5, 0.5) = " + fmt("%.6f", b));
  o.note("adv_d(0.9,0.1)=" + fmt("%.5f", a) + " adv_d(0.5,0.5)=" + fmt("%.5f", b));
  return o;
}

Outcome criterion_6() {
  Outcome o;
  Rng rng(6);
  const auto a = random_tensor({3, 32, 32}, rng);
  const auto same = measure(a, a);
  o.require(same.mse == 0 && same.rmse == 0 && same.ssim == 1 && std::isinf(same.psnr) && same.psnr > 0,
            "identical pair");
  o.require(std::abs(psnr_from_mse(0.01) - 20.0) <= 1e-6, "psnr(mse 0.01) = " + fmt("%.9f", psnr_from_mse(0.01)));
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const auto m = measure(random_tensor({3, 16, 16}, rng), random_tensor({3, 16, 16}, rng));
    worst = std::max(worst, std::abs(m.rmse * m.rmse - m.mse) / m.mse);
  }
  o.require(worst <= 1e-12, "rmse^2 vs mse relative error " + fmt("%.2e", worst));
  o.note("psnr(0.01)=" + fmt("%.9f", psnr_from_mse(0.01)) + ", rmse^2/mse worst rel " + fmt("%.1e", worst));
  return o;
}

Outcome criterion_7() {
  Outcome o;
  Rng rng(7);
  bool partition = true, instance = true;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t w = 1 + rng.below(24), h = 1 + rng.below(24), classes = 1 + rng.below(12);
    LabelMap m{w, h, std::vector<std::uint8_t>(w * h)};
    for (auto& id : m.ids) id = static_cast<std::uint8_t>(rng.below(classes));
    const auto t = one_hot_encode(m, classes);
    for (std::size_t i = 0; i < w * h; ++i) {
      float s = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        const float v = t[c * w * h + i];
        partition = partition && (v == 0.0f || v == 1.0f);
        s += v;
      }
      partition = partition && s == 1.0f;
    }
    std::vector<std::size_t> complex_ids;
    for (std::size_t c = 0; c < classes; ++c)
      if (rng.uniform() < 0.4) complex_ids.push_back(c);
    if (complex_ids.empty()) continue;
    const auto inst = extract_instance_map(m, complex_ids);
    for (std::size_t j = 0; j < complex_ids.size(); ++j)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float expect = m.ids[y * w + x] == complex_ids[j] ? 1.0f : 0.0f;
          instance = instance && inst[(j * h + y) * w + x] == expect;
        }
  }
  o.require(partition, "one-hot partition of unity");
  o.require(instance, "instance channels equal brute-force masks");

  Rng noise(77);
  const auto z = add_noise(Tensor::zeros({1000000}), 0.1, noise);
  double sum = 0, sq = 0;
  for (float v : z.data()) sum += v;
  const double mean = sum / 1e6;
  for (float v : z.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / 1e6);
  o.require(std::abs(mean) <= 1e-3, "noise mean " + fmt("%.5f", mean));
  o.require(std::abs(sd - 0.1) <= 2e-3, "noise std " + fmt("%.5f", sd));
  o.note("noise mean " + fmt("%.5f", mean) + ", std " + fmt("%.5f", sd));
  return o;
}

Outcome criterion_8() {
  Outcome o;
  Rng rng(8);
  for (std::size_t size : {64, 256}) {
    GeneratorConfig gc;  // full default widths and nine residual blocks
    gc.input_channels = 5;
    gc.image_size = size;
    Generator<float> g(gc, rng);
    NoGradGuard guard;
    g.set_mode(BatchNormMode::kBatchStats);
    const auto y = g.forward(random_tensor({1, 5, size, size}, rng, 0, 1));
    o.require(y.shape() == Shape({1, 3, size, size}), "G output " + y.shape().str());
    bool in_range = true;
    for (float v : y.data()) in_range = in_range && v >= -1.0f && v <= 1.0f;
    o.require(in_range, "G output in [-1, 1] at " + std::to_string(size));
  }

  CascadeNet<float> phi(CascadeNetConfig{});
  const auto f = phi.features(random_tensor({1, 3, 64, 64}, rng));
  const Shape expected[5] = {{1, 64, 64, 64}, {1, 64, 64, 64}, {1, 128, 32, 32}, {1, 128, 32, 32}, {1, 256, 16, 16}};
  o.require(f.size() == 5, std::to_string(f.size()) + " cascade levels");
  for (std::size_t n = 0; n < std::min<std::size_t>(5, f.size()); ++n)
    o.require(f[n].shape() == expected[n], "level " + std::to_string(n + 1) + " shape " + f[n].shape().str());

  // 100 alternating steps, checking every freeze and detach contract each time.
  RunConfig cfg;
  cfg.image_size = 16;
  cfg.jitter_size = 16;
  cfg.g_base_width = 4;
  cfg.g_res_blocks = 1;
  cfg.d_base_width = 4;
  cfg.d_layers = 2;
  cfg.phi_widths = {4, 4, 8, 8, 8};
  Trainer t(cfg, 5);
  const auto phi_init = snapshot(t.cascade().parameters());
  std::vector<std::pair<Tensor, Tensor>> data;
  for (std::uint64_t s = 1; s <= 4; ++s) {
    const auto scene = generate_scene({s, 16, 2, 0.5});
    data.emplace_back(encode_layout(scene.layout, 4, {3}, true).reshape({1, 5, 16, 16}),
                      image_to_tensor(scene.target).reshape({1, 3, 16, 16}));
  }
  bool d_frozen = true, detached = true, phi_frozen = true, phi_no_grad = true;
  for (int step = 0; step < 100; ++step) {
    const auto& [x, y] = data[step % data.size()];
    const auto xn = add_noise(x, cfg.noise_sigma, rng);
    t.generator().set_mode(BatchNormMode::kTrain);
    const auto fake = t.generator().forward(xn);
    LossBundle b;
    const auto g_grads = snapshot(t.generator().parameters(), true);
    t.discriminator_step(xn, y, fake, rng, b);
    detached = detached && snapshot(t.generator().parameters(), true) == g_grads;
    const auto d_params = snapshot(t.discriminator().parameters());
    const auto d_buffers = snapshot(t.discriminator().buffers());
    t.generator_step(xn, y, fake, b);
    d_frozen = d_frozen && snapshot(t.discriminator().parameters()) == d_params &&
               snapshot(t.discriminator().buffers()) == d_buffers;
    phi_frozen = phi_frozen && snapshot(t.cascade().parameters()) == phi_init;
    for (const auto& p : t.cascade().parameters()) phi_no_grad = phi_no_grad && !p.tensor.has_grad();
  }
  o.require(detached, "D step left G gradients untouched");
  o.require(d_frozen, "D parameters and buffers unchanged by G steps");
  o.require(phi_frozen && phi_no_grad, "cascade network frozen");
  o.note("G 64->64 and 256->256 in [-1,1]; 5 cascade maps; contracts held over 100 steps");
  return o;
}

Outcome criterion_9() {
  Outcome o;
  const auto cwd = work_dir("c9");
  if (!synthesize_desk(cwd, o)) return o;

  const auto t0 = std::chrono::steady_clock::now();
  const int rc = cli("train --config '" + desk_config() + "'", cwd, "train.log");
  const double minutes = seconds_since(t0) / 60.0;
  o.require(rc == 0, "train exit " + std::to_string(rc));
  if (rc != 0) return o;

  const auto rows = read_csv(cwd / "runs/desk/heldout.csv");
  o.require(rows.size() == 201 && rows.front()[0] == "0" && rows.back()[0] == "200",
            "heldout.csv should hold epochs 0..200");
  if (rows.size() < 2) return o;
  const double initial = std::stod(rows.front()[1]), final_l1 = std::stod(rows.back()[1]);

  const std::string script = std::string(DGAN_SOURCE_DIR) + "/tests/scripts/class_mean_baseline.py";
  const int brc = shell(std::string("'") + DGAN_PYTHON + "' '" + script + "' data/desk/manifest.tsv --holdout 40", cwd,
                        cwd / "baseline.txt");
  o.require(brc == 0, "baseline script exit " + std::to_string(brc));
  const double baseline = brc == 0 ? std::stod(slurp(cwd / "baseline.txt")) : 0.0;

  o.require(minutes <= 45.0, "wall time " + fmt("%.1f", minutes) + " min > 45");
  o.require(final_l1 <= 0.5 * initial, "final " + fmt("%.6f", final_l1) + " > half of epoch-0 " + fmt("%.6f", initial));
  o.require(final_l1 < baseline, "final " + fmt("%.6f", final_l1) + " not below class-mean baseline " +
                                     fmt("%.6f", baseline));
  o.note("epoch-0 L1 " + fmt("%.6f", initial) + ", final " + fmt("%.6f", final_l1) + ", baseline " +
         fmt("%.6f", baseline) + ", " + fmt("%.1f", minutes) + " min");
  return o;
}

Outcome criterion_10() {
  Outcome o;
  const auto cwd = work_dir("c10");
  if (!synthesize_desk(cwd, o)) return o;
  const int rc = cli("ablate --config '" + desk_config() + "' --epochs 20 --out ablation", cwd, "ablate.log");
  o.require(rc == 0, "ablate exit " + std::to_string(rc));
  if (rc != 0) return o;

  std::string header;
  const auto rows = read_csv(cwd / "ablation/ablation.csv", &header);
  o.require(header.rfind("label,psnr,mse,rmse,ssim", 0) == 0, "column order: " + header);
  const std::vector<std::string> labels{"Z0.1", "Z0.04", "Z0.4", "L_p", "L_c", "L_c+L_p", "L_c+Ins.", "L_p+Ins.",
                                        "L_c+L_p+Ins.", "Ours"};
  o.require(rows.size() == labels.size(), std::to_string(rows.size()) + " rows");
  double mse_01 = NAN, mse_04 = NAN;
  for (std::size_t i = 0; i < std::min(rows.size(), labels.size()); ++i) {
    o.require(rows[i].size() >= 5 && rows[i][0] == labels[i], "row " + std::to_string(i) + " is " + rows[i][0]);
    if (rows[i][0] == "Z0.1") mse_01 = std::stod(rows[i][2]);
    if (rows[i][0] == "Z0.4") mse_04 = std::stod(rows[i][2]);
  }
  o.require(mse_01 <= mse_04, "Z0.1 mse " + fmt("%.6f", mse_01) + " > Z0.4 mse " + fmt("%.6f", mse_04));
  o.note("Z0.1 mse " + fmt("%.6f", mse_01) + " vs Z0.4 mse " + fmt("%.6f", mse_04));
  std::cout << slurp(cwd / "ablation/ablation.csv");
  return o;
}

Outcome criterion_11() {
  Outcome o;
  const auto cwd = work_dir("c11");
  if (!synthesize_desk(cwd, o)) return o;
  const std::string base = "train --config '" + desk_config() + "'";
  o.require(cli(base + " --epochs 3 --out-dir a", cwd, "a.log") == 0, "run a");
  o.require(cli(base + " --epochs 3 --out-dir b", cwd, "b.log") == 0, "run b");
  const auto a = slurp(cwd / "a" / kCheckpointFile);
  o.require(!a.empty() && a == slurp(cwd / "b" / kCheckpointFile), "identical runs give identical checkpoints");

  // Interrupted after epoch 2, then resumed to 3.
  o.require(cli(base + " --epochs 2 --out-dir r", cwd, "r1.log") == 0, "first half of resumed run");
  o.require(cli(base + " --epochs 3 --out-dir r --resume", cwd, "r2.log") == 0, "resumed run");
  o.require(a == slurp(cwd / "r" / kCheckpointFile), "resumed checkpoint equals uninterrupted one");
  o.require(slurp(cwd / "a/heldout.csv") == slurp(cwd / "r/heldout.csv"), "resumed held-out log");

  const auto bytes = read_file_bytes(cwd / "a" / kCheckpointFile);
  const auto decoded = decode_checkpoint(bytes);
  o.require(encode_checkpoint(decoded) == bytes, "decode/encode round trip");
  auto model = load_model(decoded);
  const auto again = model.trainer->checkpoint(model.classes, model.complex_ids);
  auto reencoded = encode_checkpoint(again);
  o.require(reencoded == bytes, "restore/checkpoint round trip");

  // Every flipped byte must be rejected; payload bytes specifically by the CRC.
  Rng rng(11);
  std::size_t rejected = 0, crc = 0;
  const std::size_t trials = 200;
  for (std::size_t k = 0; k < trials; ++k) {
    auto bad = bytes;
    const std::size_t pos = k == 0 ? bytes.size() - 5 : rng.below(bytes.size());
    bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    try {
      decode_checkpoint(bad);
    } catch (const CheckpointError& e) {
      ++rejected;
      if (std::string(e.what()).find("CRC mismatch") != std::string::npos) ++crc;
      else if (k == 0) o.require(false, "payload corruption not reported as CRC mismatch");
    }
  }
  o.require(rejected == trials, std::to_string(trials - rejected) + " corruptions accepted");
  o.note("bit-identical reruns and resume, " + std::to_string(rejected) + "/" + std::to_string(trials) +
         " corruptions rejected (" + std::to_string(crc) + " by CRC)");
  return o;
}

const char* const kTitles[] = {
    "",
    "gradient suite",
    "residual identity",
    "perturbed-sample endpoints",
    "objective composition",
    "adversarial arithmetic",
    "metric oracles",
    "preprocessing oracles",
    "architecture contract",
    "desk-scale learning",
    "ablation harness",
    "determinism and persistence",
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      which.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--only N]...\n";
      return 2;
    }
  }
  if (which.empty())
    for (int n = 1; n <= 11; ++n) which.push_back(n);

  const std::function<Outcome()> criteria[] = {nullptr,     criterion_1, criterion_2,  criterion_3,
                                               criterion_4, criterion_5, criterion_6,  criterion_7,
                                               criterion_8, criterion_9, criterion_10, criterion_11};
  int failed = 0;
  for (int n : which) {
    if (n < 1 || n > 11) {
      std::cerr << "no criterion " << n << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = criteria[n]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail += std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << n << ": " << kTitles[n] << " (" << o.detail
              << ")\n"
              << std::flush;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
