#pragma once

// Flat `key = value` run configuration. Lines starting with '#' are
// comments; lists are comma-separated; booleans accept true/false/1/0/on/off.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgan/image_io.hpp"

namespace dgan {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::size_t epochs = 200;
  std::size_t batch_size = 1;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  double noise_sigma = 0.1;
  bool noise_per_step = true;  // false: one fixed draw per sample
  bool use_perturbed = true;
  bool use_cascade = true;
  bool use_instance = true;
  bool saturating_g = false;

  double gamma = 100.0;
  double theta_p = 1.0;
  double sigma_c = 1.0;
  std::vector<double> cascade_lambda;  // empty: 1/N per level

  std::size_t image_size = 256;
  std::size_t jitter_size = 286;  // equal to image_size disables jitter
  std::size_t g_base_width = 64;
  std::size_t g_res_blocks = 9;
  bool g_skips = true;
  std::size_t d_base_width = 64;
  std::size_t d_layers = 4;
  std::vector<std::size_t> phi_widths{64, 64, 128, 128, 256};
  std::uint64_t phi_seed = 19;
  std::string phi_weights;  // optional checkpoint with level<n>.weight / .bias

  std::vector<std::string> complex_classes{"car"};
  std::string train_manifest;
  std::string eval_manifest;  // empty: hold out the last `holdout` training entries
  std::size_t holdout = 0;
  std::string out_dir = "run";
  std::size_t checkpoint_every = 1;  // epochs; 0 keeps only the final checkpoint
  std::string bn_inference = "batch";  // batch | running
  std::uint64_t eval_seed = 7;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta1/beta2 must lie in [0, 1)");
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
    if (gamma < 0 || theta_p < 0 || sigma_c < 0) throw ConfigError("loss weights must be >= 0");
    if (image_size == 0 || image_size % 4 != 0) throw ConfigError("image_size must be a positive multiple of 4");
    if (jitter_size < image_size) throw ConfigError("jitter_size must be >= image_size");
    if (phi_widths.empty()) throw ConfigError("phi_widths must not be empty");
    if (!cascade_lambda.empty() && cascade_lambda.size() != phi_widths.size())
      throw ConfigError("cascade_lambda needs one weight per phi level");
    if (bn_inference != "batch" && bn_inference != "running")
      throw ConfigError("bn_inference must be 'batch' or 'running'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

template <class N>
N parse_number(const std::string& s) {
  N v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("not a valid number: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

template <class N>
std::string number_text(N v) {
  if constexpr (std::is_floating_point_v<N>) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  } else {
    return std::to_string(v);
  }
}

template <class V>
std::string join(const V& items) {
  std::string s;
  for (const auto& x : items) {
    if (!s.empty()) s += ",";
    if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::string>)
      s += x;
    else
      s += number_text(x);
  }
  return s;
}

}  // namespace detail

struct ConfigField {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

/// Setter/getter table over every RunConfig key, in canonical order.
inline std::vector<ConfigField> config_fields(RunConfig& c) {
  std::vector<ConfigField> f;
  auto num = [&f](const char* key, auto& ref) {
    using N = std::decay_t<decltype(ref)>;
    f.push_back({key, [&ref](const std::string& s) { ref = detail::parse_number<N>(s); },
                 [&ref] { return detail::number_text(ref); }});
  };
  auto flag = [&f](const char* key, bool& ref) {
    f.push_back({key, [&ref](const std::string& s) { ref = detail::parse_bool(s); },
                 [&ref] { return std::string(ref ? "true" : "false"); }});
  };
  auto text = [&f](const char* key, std::string& ref) {
    f.push_back({key, [&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }});
  };
  auto list = [&f](const char* key, auto& ref) {
    using V = typename std::decay_t<decltype(ref)>::value_type;
    f.push_back({key,
                 [&ref](const std::string& s) {
                   ref.clear();
                   for (const auto& item : detail::split_list(s)) {
                     if constexpr (std::is_same_v<V, std::string>)
                       ref.push_back(item);
                     else
                       ref.push_back(detail::parse_number<V>(item));
                   }
                 },
                 [&ref] { return detail::join(ref); }});
  };

  num("seed", c.seed);
  num("epochs", c.epochs);
  num("batch_size", c.batch_size);
  num("lr", c.lr);
  num("beta1", c.beta1);
  num("beta2", c.beta2);
  num("adam_eps", c.adam_eps);
  num("noise_sigma", c.noise_sigma);
  flag("noise_per_step", c.noise_per_step);
  flag("use_perturbed", c.use_perturbed);
  flag("use_cascade", c.use_cascade);
  flag("use_instance", c.use_instance);
  flag("saturating_g", c.saturating_g);
  num("gamma", c.gamma);
  num("theta_p", c.theta_p);
  num("sigma_c", c.sigma_c);
  list("cascade_lambda", c.cascade_lambda);
  num("image_size", c.image_size);
  num("jitter_size", c.jitter_size);
  num("g_base_width", c.g_base_width);
  num("g_res_blocks", c.g_res_blocks);
  flag("g_skips", c.g_skips);
  num("d_base_width", c.d_base_width);
  num("d_layers", c.d_layers);
  list("phi_widths", c.phi_widths);
  num("phi_seed", c.phi_seed);
  text("phi_weights", c.phi_weights);
  list("complex_classes", c.complex_classes);
  text("train_manifest", c.train_manifest);
  text("eval_manifest", c.eval_manifest);
  num("holdout", c.holdout);
  text("out_dir", c.out_dir);
  num("checkpoint_every", c.checkpoint_every);
  text("bn_inference", c.bn_inference);
  num("eval_seed", c.eval_seed);
  return f;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (auto& field : config_fields(c))
    if (field.key == key) return field.set(value);
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies `key = value` lines on top of `c`. `origin` prefixes error messages.
inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    try {
      set_config_value(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

/// Every key, resolved, one per line; parses back to an equal config.
inline std::string config_text(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& field : config_fields(copy)) out += field.key + " = " + field.get() + "\n";
  return out;
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  apply_config_text(c, text);
  return c;
}

}  // namespace dgan
