#pragma once

// Layout encoding, input noise, jitter-crop, synthetic street scenes and the
// on-disk dataset layout (PGM layouts, PPM targets, class table, manifest).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgan/image_io.hpp"
#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

struct LabelMap {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> ids;  // row-major

  std::uint8_t at(std::size_t x, std::size_t y) const { return ids[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return ids[y * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

struct ClassTable {
  std::vector<std::string> names;  // index = class id

  std::size_t size() const { return names.size(); }
  std::size_t id_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ContractError("unknown class name '" + name + "'");
  }
};

// Synthetic scene classes.
enum SceneClass : std::uint8_t { kSky = 0, kRoad = 1, kBuilding = 2, kCar = 3 };

inline ClassTable street_classes() { return {{"sky", "road", "building", "car"}}; }

// ---------------------------------------------------------------------------
// Encoding

/// [C, H, W]; channel c is 1 where the id equals c.
inline Tensor one_hot_encode(const LabelMap& m, std::size_t num_classes) {
  const std::size_t hw = m.width * m.height;
  std::vector<float> v(num_classes * hw, 0.0f);
  for (std::size_t i = 0; i < hw; ++i) {
    const std::size_t id = m.ids[i];
    if (id >= num_classes)
      throw ContractError("class id " + std::to_string(id) + " at pixel (x=" +
                          std::to_string(i % m.width) + ", y=" + std::to_string(i / m.width) +
                          ") is outside [0, " + std::to_string(num_classes) + ")");
    v[id * hw + i] = 1.0f;
  }
  return Tensor(Shape{num_classes, m.height, m.width}, std::move(v));
}

/// Per-pixel argmax over channels of a [C, H, W] tensor (first maximum wins).
inline LabelMap argmax_decode(const Tensor& encoded) {
  const std::size_t c = encoded.dim(0), h = encoded.dim(1), w = encoded.dim(2), hw = h * w;
  LabelMap m{w, h, std::vector<std::uint8_t>(hw)};
  auto d = encoded.data();
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (d[k * hw + i] > d[best * hw + i]) best = k;
    m.ids[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

/// One binary channel per complex class, in the given id order: 1 on that
/// class's pixels, 0 elsewhere. An empty id list yields an undefined tensor.
inline Tensor extract_instance_map(const LabelMap& m, const std::vector<std::size_t>& complex_ids) {
  if (complex_ids.empty()) {
    std::cerr << "warning: no complex classes configured; instance map has zero channels\n";
    return {};
  }
  const std::size_t hw = m.width * m.height;
  std::vector<float> v(complex_ids.size() * hw, 0.0f);
  for (std::size_t k = 0; k < complex_ids.size(); ++k)
    for (std::size_t i = 0; i < hw; ++i)
      if (m.ids[i] == complex_ids[k]) v[k * hw + i] = 1.0f;
  return Tensor(Shape{complex_ids.size(), m.height, m.width}, std::move(v));
}

/// Concatenates rank-3 tensors along their first axis.
inline Tensor stack_channels(const std::vector<Tensor>& parts) {
  std::vector<float> v;
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (!p.defined()) continue;
    if (p.rank() != 3 || p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2))
      throw DimensionError("stack_channels: incompatible " + p.shape().str());
    v.insert(v.end(), p.data().begin(), p.data().end());
    c += p.dim(0);
  }
  return Tensor(Shape{c, parts[0].dim(1), parts[0].dim(2)}, std::move(v));
}

/// One-hot layout followed by the instance channels (when requested).
inline Tensor encode_layout(const LabelMap& m, std::size_t num_classes,
                            const std::vector<std::size_t>& complex_ids, bool use_instance) {
  auto onehot = one_hot_encode(m, num_classes);
  if (!use_instance || complex_ids.empty()) return onehot;
  return stack_channels({onehot, extract_instance_map(m, complex_ids)});
}

/// x + N(0, sigma^2) per element, unclamped.
inline Tensor add_noise(const Tensor& input, double sigma, Rng& rng) {
  if (sigma < 0) throw ContractError("add_noise: negative sigma");
  if (sigma == 0) return input.detach();
  std::vector<float> v(input.data().begin(), input.data().end());
  for (auto& x : v) x = static_cast<float>(x + sigma * rng.gaussian());
  return Tensor(input.shape(), std::move(v));
}

// ---------------------------------------------------------------------------
// Jitter crop

/// Nearest neighbour: destination index i samples source floor(i * src / dst).
inline Tensor resize_nearest(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<float> v(c * out_h * out_w);
  auto d = img.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t si = i * h / out_h;
      for (std::size_t j = 0; j < out_w; ++j) v[(k * out_h + i) * out_w + j] = d[(k * h + si) * w + j * w / out_w];
    }
  return Tensor(Shape{c, out_h, out_w}, std::move(v));
}

inline Tensor crop(const Tensor& img, std::size_t top, std::size_t left, std::size_t size) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (top + size > h || left + size > w) throw DimensionError("crop window outside image");
  std::vector<float> v(c * size * size);
  auto d = img.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < size; ++i)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>((k * h + top + i) * w + left), size,
                  v.begin() + static_cast<std::ptrdiff_t>((k * size + i) * size));
  return Tensor(Shape{c, size, size}, std::move(v));
}

/// Resize both to enlarged x enlarged, then crop both at the same offset.
inline std::pair<Tensor, Tensor> jitter_crop_at(const Tensor& input, const Tensor& target,
                                                std::size_t base, std::size_t enlarged,
                                                std::size_t top, std::size_t left) {
  if (enlarged < base || base == 0)
    throw ContractError("jitter_crop: need enlarged >= base > 0, got " + std::to_string(base) +
                        " -> " + std::to_string(enlarged));
  if (input.rank() != 3 || target.rank() != 3 || input.dim(1) != target.dim(1) ||
      input.dim(2) != target.dim(2))
    throw DimensionError("jitter_crop: input " + input.shape().str() + " and target " +
                         target.shape().str() + " must be aligned [C,H,W] images");
  auto a = resize_nearest(input, enlarged, enlarged);
  auto b = resize_nearest(target, enlarged, enlarged);
  return {crop(a, top, left, base), crop(b, top, left, base)};
}

inline std::pair<Tensor, Tensor> jitter_crop(const Tensor& input, const Tensor& target,
                                             std::size_t base, std::size_t enlarged, Rng& rng) {
  if (enlarged < base) throw ContractError("jitter_crop: enlarged < base");
  const std::size_t range = enlarged - base + 1;
  const std::size_t top = rng.below(range);
  const std::size_t left = rng.below(range);
  return jitter_crop_at(input, target, base, enlarged, top, left);
}

// ---------------------------------------------------------------------------
// Synthetic street scenes

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::size_t num_objects = 3;  // cars; zero gives an empty (all-sky) scene
  double overlap_rate = 0.5;    // chance each later car is placed over an earlier one
};

struct CarInstance {
  std::size_t left, top, width, height;
  bool contains(std::size_t x, std::size_t y) const {
    if (x < left || y < top || x >= left + width || y >= top + height) return false;
    const long long r = static_cast<long long>(std::min(width, height) / 4);
    const long long lx = static_cast<long long>(x - left), ly = static_cast<long long>(y - top);
    const long long w = static_cast<long long>(width), h = static_cast<long long>(height);
    const long long cx = lx < r ? r : (lx >= w - r ? w - r - 1 : lx);
    const long long cy = ly < r ? r : (ly >= h - r ? h - r - 1 : ly);
    const long long dx = lx - cx, dy = ly - cy;
    return dx * dx + dy * dy <= r * r;
  }
};

struct Scene {
  LabelMap layout;
  Image8 target;
  std::vector<CarInstance> cars;  // in drawing order
};

struct Palette {
  static constexpr std::uint8_t sky[3] = {150, 190, 230};
  static constexpr std::uint8_t road[3] = {90, 90, 96};
  static constexpr std::uint8_t building[3] = {172, 120, 88};
  static constexpr std::uint8_t car[3] = {210, 48, 40};
};

/// Sky above a horizon, a road below it, building blocks standing on the
/// horizon, and rounded-rectangle cars on the road that may overlap. Each car
/// is shaded by a vertical ramp over its own box (bright top, dark bottom)
/// with a darker 1-px outline, so its appearance depends on the individual
/// instance and not only on the class mask.
inline Scene generate_scene(const SyntheticSceneSpec& spec) {
  const std::size_t s = spec.size;
  if (s < 16) throw ContractError("scene size must be at least 16");
  Rng rng(spec.seed);
  Scene scene;
  scene.layout = LabelMap{s, s, std::vector<std::uint8_t>(s * s, kSky)};

  if (spec.num_objects > 0) {
    const std::size_t horizon = s / 2 + rng.below(s / 8 + 1);
    for (std::size_t y = horizon; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) scene.layout.at(x, y) = kRoad;
    for (std::size_t x0 = 0; x0 < s;) {
      const std::size_t bw = std::min(s - x0, s / 8 + rng.below(s / 8 + 1));
      if (rng.uniform() < 0.7) {
        const std::size_t top = s / 8 + rng.below(horizon - s / 8 - s / 16);
        for (std::size_t y = top; y < horizon; ++y)
          for (std::size_t x = x0; x < x0 + bw; ++x) scene.layout.at(x, y) = kBuilding;
      }
      x0 += bw;
    }

    const std::size_t road_top = horizon > s / 16 ? horizon - s / 16 : 0;
    for (std::size_t k = 0; k < spec.num_objects; ++k) {
      CarInstance car{};
      car.width = s / 5 + rng.below(s / 6 + 1);
      car.height = s / 8 + rng.below(s / 12 + 1);
      const std::size_t max_left = s - car.width;
      const std::size_t max_top = s - car.height;
      const std::size_t min_top = std::min(road_top, max_top);
      if (k > 0 && rng.uniform() < spec.overlap_rate) {
        const auto& other = scene.cars[rng.below(scene.cars.size())];
        const double fx = rng.uniform(0.3, 0.7) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        const double fy = rng.uniform(-0.4, 0.4);
        const double left = static_cast<double>(other.left) + fx * static_cast<double>(other.width);
        const double top = static_cast<double>(other.top) + fy * static_cast<double>(other.height);
        car.left = static_cast<std::size_t>(std::clamp(left, 0.0, static_cast<double>(max_left)));
        car.top = static_cast<std::size_t>(
            std::clamp(top, static_cast<double>(min_top), static_cast<double>(max_top)));
      } else {
        car.left = rng.below(max_left + 1);
        car.top = min_top + rng.below(max_top - min_top + 1);
      }
      scene.cars.push_back(car);
    }
  }

  // Render layout classes, then cars in order.
  scene.target = Image8{s, s, 3, std::vector<std::uint8_t>(s * s * 3)};
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const auto* col = scene.layout.at(x, y) == kRoad       ? Palette::road
                        : scene.layout.at(x, y) == kBuilding ? Palette::building
                                                             : Palette::sky;
      for (std::size_t c = 0; c < 3; ++c) scene.target.at(x, y, c) = col[c];
    }
  for (const auto& car : scene.cars) {
    for (std::size_t y = car.top; y < car.top + car.height; ++y)
      for (std::size_t x = car.left; x < car.left + car.width; ++x) {
        if (!car.contains(x, y)) continue;
        scene.layout.at(x, y) = kCar;
        const bool edge = x == 0 || y == 0 || x + 1 == s || y + 1 == s || !car.contains(x - 1, y) ||
                          !car.contains(x + 1, y) || !car.contains(x, y - 1) || !car.contains(x, y + 1);
        const double t = car.height > 1 ? double(y - car.top) / double(car.height - 1) : 0.0;
        const double shade = edge ? 0.45 : 1.15 - 0.6 * t;
        for (std::size_t c = 0; c < 3; ++c)
          scene.target.at(x, y, c) =
              static_cast<std::uint8_t>(std::clamp(std::round(Palette::car[c] * shade), 0.0, 255.0));
      }
  }
  return scene;
}

/// Pixel masks of the cars' full footprints (before occlusion).
inline std::vector<std::vector<bool>> car_masks(const Scene& scene) {
  const std::size_t s = scene.layout.width;
  std::vector<std::vector<bool>> masks;
  for (const auto& car : scene.cars) {
    std::vector<bool> m(s * s, false);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) m[y * s + x] = car.contains(x, y);
    masks.push_back(std::move(m));
  }
  return masks;
}

// ---------------------------------------------------------------------------
// On-disk dataset

inline LabelMap read_label_map(const std::filesystem::path& path) {
  auto img = read_pnm(path);
  if (img.channels != 1) throw ParseError(path.string() + ": expected a P5 layout", 0);
  return LabelMap{img.width, img.height, std::move(img.pixels)};
}

inline void write_label_map(const std::filesystem::path& path, const LabelMap& m) {
  write_pnm(path, Image8{m.width, m.height, 1, m.ids});
}

/// Lines of "id<TAB>name"; ids must be 0..N-1 in order.
inline ClassTable read_class_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class table " + path.string());
  ClassTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>name");
    const std::size_t id = std::stoul(line.substr(0, tab));
    if (id != table.names.size())
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": ids must be consecutive from 0");
    table.names.push_back(line.substr(tab + 1));
  }
  return table;
}

inline void write_class_table(const std::filesystem::path& path, const ClassTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < table.names.size(); ++i) out << i << '\t' << table.names[i] << '\n';
}

struct ManifestEntry {
  std::filesystem::path layout, target;
  std::uint64_t seed = 0;
};

inline constexpr const char* kManifestHeader = "layout_path\ttarget_path\tseed";

/// Relative paths resolve against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line == kManifestHeader)) continue;
    std::istringstream fields(line);
    std::string a, b, seed;
    if (!std::getline(fields, a, '\t') || !std::getline(fields, b, '\t'))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected two tab-separated paths");
    std::getline(fields, seed, '\t');
    ManifestEntry e{a, b, seed.empty() ? 0 : std::stoull(seed)};
    if (e.layout.is_relative()) e.layout = base / e.layout;
    if (e.target.is_relative()) e.target = base / e.target;
    entries.push_back(std::move(e));
  }
  return entries;
}

struct DatasetSpec {
  std::uint64_t seed = 42;
  std::size_t count = 200;
  std::size_t size = 64;
  std::size_t max_objects = 4;
  double overlap_rate = 0.5;
};

/// Scene i uses seed derive_seed(spec.seed, i) and 1 + (that seed mod
/// max_objects) cars. Writes layouts/, targets/, classes.tsv, manifest.tsv.
inline void synthesize_dataset(const DatasetSpec& spec, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out / "layouts");
  fs::create_directories(out / "targets");
  write_class_table(out / "classes.tsv", street_classes());
  std::ofstream manifest(out / "manifest.tsv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + out.string());
  manifest << kManifestHeader << '\n';
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::uint64_t seed = derive_seed(spec.seed, i);
    SyntheticSceneSpec s{seed, spec.size, spec.max_objects == 0 ? 0 : 1 + seed % spec.max_objects,
                         spec.overlap_rate};
    const auto scene = generate_scene(s);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu", i);
    const std::string layout = std::string("layouts/") + name + ".pgm";
    const std::string target = std::string("targets/") + name + ".ppm";
    write_label_map(out / layout, scene.layout);
    write_pnm(out / target, scene.target);
    manifest << layout << '\t' << target << '\t' << seed << '\n';
  }
  if (!manifest) throw IoError("failed writing manifest in " + out.string());
}

}  // namespace dgan
