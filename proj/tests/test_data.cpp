#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dgan/data.hpp"

using namespace dgan;
namespace fs = std::filesystem;

namespace {

LabelMap random_map(Rng& r, std::size_t w, std::size_t h, std::size_t classes) {
  LabelMap m{w, h, std::vector<std::uint8_t>(w * h)};
  for (auto& id : m.ids) id = static_cast<std::uint8_t>(r.below(classes));
  return m;
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dgan_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<std::uint8_t> all;
  for (const auto& f : files) {
    const auto rel = fs::relative(f, root).string();
    all.insert(all.end(), rel.begin(), rel.end());
    const auto b = read_file_bytes(f);
    all.insert(all.end(), b.begin(), b.end());
  }
  return all;
}

}  // namespace

TEST(OneHot, PartitionOfUnity) {
  Rng r(1);
  for (int k = 0; k < 50; ++k) {
    const auto m = random_map(r, 7, 5, 4);
    const auto t = one_hot_encode(m, 4);
    ASSERT_EQ(t.shape(), (Shape{4, 5, 7}));
    for (std::size_t i = 0; i < 35; ++i) {
      float s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += t[c * 35 + i];
      EXPECT_EQ(s, 1.0f);
    }
    EXPECT_EQ(argmax_decode(t), m);
  }
}

TEST(OneHot, Examples) {
  const auto t = one_hot_encode(LabelMap{2, 2, {0, 1, 1, 2}}, 3);
  EXPECT_EQ(t.values(), (std::vector<float>{1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1}));
  const auto u = one_hot_encode(LabelMap{2, 1, {0, 0}}, 2);
  EXPECT_EQ(u.values(), (std::vector<float>{1, 1, 0, 0}));
}

TEST(OneHot, OutOfRangeNamesPixel) {
  try {
    one_hot_encode(LabelMap{3, 2, {0, 0, 0, 0, 5, 0}}, 4);
    FAIL() << "expected an error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("(x=1, y=1)"), std::string::npos) << e.what();
  }
}

TEST(InstanceMap, MatchesBruteForceMask) {
  LabelMap m{3, 3, std::vector<std::uint8_t>(9, 0)};
  m.at(0, 0) = kCar;
  m.at(1, 1) = kCar;
  m.at(2, 0) = kRoad;
  const auto inst = extract_instance_map(m, {kCar});
  ASSERT_EQ(inst.shape(), (Shape{1, 3, 3}));
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x)
      EXPECT_EQ(inst[y * 3 + x], (x == 0 && y == 0) || (x == 1 && y == 1) ? 1.0f : 0.0f);
}

TEST(InstanceMap, EmptyAndSubsetOfOneHot) {
  const auto none = extract_instance_map(LabelMap{2, 2, {0, 1, 2, 1}}, {kCar});
  for (float v : none.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_FALSE(extract_instance_map(LabelMap{2, 2, {0, 1, 2, 1}}, {}).defined());

  Rng r(2);
  const auto m = random_map(r, 8, 8, 4);
  const auto inst = extract_instance_map(m, {kCar});
  const auto hot = one_hot_encode(m, 4);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(inst[i] * hot[kCar * 64 + i], inst[i]);
  const auto enc = encode_layout(m, 4, {kCar}, true);
  EXPECT_EQ(enc.dim(0), 5u);
  EXPECT_EQ(encode_layout(m, 4, {kCar}, false).dim(0), 4u);
}

TEST(Noise, ZeroSigmaIsExact) {
  Rng r(3);
  const auto x = one_hot_encode(random_map(r, 4, 4, 3), 3);
  EXPECT_EQ(add_noise(x, 0.0, r).values(), x.values());
  EXPECT_THROW(add_noise(x, -0.1, r), ContractError);
}

TEST(Noise, MomentsOverAMillionDraws) {
  Rng r(4);
  const auto y = add_noise(Tensor::zeros({1000, 1000}), 0.1, r);
  double s = 0, ss = 0;
  for (float v : y.values()) s += v;
  const double mu = s / 1e6;
  for (float v : y.values()) ss += (v - mu) * (v - mu);
  EXPECT_LT(std::abs(mu), 0.001);
  EXPECT_NEAR(std::sqrt(ss / 1e6), 0.1, 0.002);
}

TEST(Noise, SeedsDiffer) {
  Rng a(5), b(6);
  const auto x = Tensor::zeros({16});
  EXPECT_NE(add_noise(x, 0.1, a).values(), add_noise(x, 0.1, b).values());
}

TEST(Jitter, ShapesAndAlignment) {
  const auto scene = generate_scene({7, 64, 3, 0.5});
  const auto x = one_hot_encode(scene.layout, 4);
  const auto y = image_to_tensor(scene.target);
  Rng r(8);
  for (int k = 0; k < 5; ++k) {
    const auto [cx, cy] = jitter_crop(x, y, 64, 72, r);
    EXPECT_EQ(cx.shape(), (Shape{4, 64, 64}));
    EXPECT_EQ(cy.shape(), (Shape{3, 64, 64}));
    // Every non-car pixel keeps its class colour after the shared crop.
    const auto ids = argmax_decode(cx);
    for (std::size_t i = 0; i < 64 * 64; ++i) {
      const std::uint8_t* col = ids.ids[i] == kSky ? Palette::sky : ids.ids[i] == kRoad ? Palette::road
                                : ids.ids[i] == kBuilding ? Palette::building : nullptr;
      if (!col) continue;
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(cy[c * 4096 + i], byte_to_unit(col[c]));
    }
  }
}

TEST(Jitter, ZeroOffsetIsTopLeftWindow) {
  Rng r(9);
  std::vector<float> v(2 * 8 * 8);
  for (auto& e : v) e = static_cast<float>(r.uniform());
  const Tensor img({2, 8, 8}, v);
  const auto [a, b] = jitter_crop_at(img, img, 8, 10, 0, 0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        EXPECT_EQ(a[(c * 8 + i) * 8 + j], img[(c * 8 + i * 8 / 10) * 8 + j * 8 / 10]);
  EXPECT_EQ(a.values(), b.values());
}

TEST(Jitter, EqualSizesAreIdentityAndBadSizesRejected) {
  Rng r(10);
  const auto img = add_noise(Tensor::zeros({3, 16, 16}), 1.0, r);
  const auto [a, b] = jitter_crop(img, img, 16, 16, r);
  EXPECT_EQ(a.values(), img.values());
  EXPECT_THROW(jitter_crop(img, img, 16, 12, r), ContractError);
  EXPECT_THROW(jitter_crop_at(img, Tensor::zeros({3, 8, 8}), 8, 16, 0, 0), DimensionError);
}

TEST(Scene, EmptySceneIsBackground) {
  const auto s = generate_scene({11, 32, 0, 0.5});
  for (auto id : s.layout.ids) EXPECT_EQ(id, kSky);
  for (std::size_t i = 0; i < 32 * 32; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.target.pixels[i * 3 + c], Palette::sky[c]);
}

TEST(Scene, Deterministic) {
  const auto a = generate_scene({12, 64, 4, 0.5}), b = generate_scene({12, 64, 4, 0.5});
  EXPECT_EQ(a.layout, b.layout);
  EXPECT_EQ(a.target, b.target);
  const auto c = generate_scene({13, 64, 4, 0.5});
  EXPECT_FALSE(a.layout == c.layout);
}

TEST(Scene, OverlapRate) {
  std::size_t overlapping = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto seed = derive_seed(2024, i);
    const auto scene = generate_scene({seed, 64, 2 + seed % 3, 0.5});
    const auto masks = car_masks(scene);
    bool hit = false;
    for (std::size_t a = 0; a < masks.size() && !hit; ++a)
      for (std::size_t b = a + 1; b < masks.size() && !hit; ++b)
        for (std::size_t p = 0; p < masks[a].size(); ++p)
          if (masks[a][p] && masks[b][p]) {
            hit = true;
            break;
          }
    overlapping += hit;
  }
  EXPECT_GE(overlapping, 40u);
}

TEST(Image, ByteMapping) {
  EXPECT_NEAR(byte_to_unit(128), 0.00392, 1e-5);
  EXPECT_EQ(byte_to_unit(0), -1.0f);
  EXPECT_EQ(byte_to_unit(255), 1.0f);
  for (int v = 0; v < 256; ++v) EXPECT_EQ(unit_to_byte(byte_to_unit(static_cast<std::uint8_t>(v))), v);
}

TEST(Image, PpmRoundTrip) {
  const auto dir = scratch_dir("ppm");
  const auto scene = generate_scene({14, 32, 3, 0.5});
  write_pnm(dir / "a.ppm", scene.target);
  const auto t = read_image(dir / "a.ppm");
  write_image(dir / "b.ppm", t);
  EXPECT_EQ(read_file_bytes(dir / "a.ppm"), read_file_bytes(dir / "b.ppm"));

  write_pnm(dir / "black.ppm", Image8{4, 4, 3, std::vector<std::uint8_t>(48, 0)});
  for (float v : read_image(dir / "black.ppm").values()) EXPECT_EQ(v, -1.0f);
}

TEST(Image, MalformedHeaderReportsOffset) {
  const std::string text = "P6\n4 x\n255\n";
  try {
    decode_pnm(std::vector<std::uint8_t>(text.begin(), text.end()));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }
  const std::string short_raster = "P5\n2 2\n255\n\x01\x02";
  try {
    decode_pnm(std::vector<std::uint8_t>(short_raster.begin(), short_raster.end()));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 11u);
  }
  EXPECT_THROW(decode_pnm({'P', '3'}), ParseError);
}

TEST(Dataset, SynthesisIsDeterministic) {
  const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  DatasetSpec spec;
  spec.count = 6;
  spec.size = 32;
  synthesize_dataset(spec, a);
  synthesize_dataset(spec, b);
  EXPECT_EQ(tree_bytes(a), tree_bytes(b));
  const auto entries = read_manifest(a / "manifest.tsv");
  ASSERT_EQ(entries.size(), 6u);
  EXPECT_EQ(entries[2].seed, derive_seed(spec.seed, 2));
  EXPECT_EQ(read_label_map(entries[0].layout).width, 32u);
  EXPECT_EQ(read_class_table(a / "classes.tsv").names, street_classes().names);
}

TEST(Dataset, ZeroCountWritesHeaderOnly) {
  const auto dir = scratch_dir("synth_empty");
  DatasetSpec spec;
  spec.count = 0;
  synthesize_dataset(spec, dir);
  std::ifstream in(dir / "manifest.tsv");
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(all, std::string(kManifestHeader) + "\n");
  EXPECT_TRUE(read_manifest(dir / "manifest.tsv").empty());
}
