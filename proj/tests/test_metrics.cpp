#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dgan/metrics.hpp"
#include "dgan/rng.hpp"

using namespace dgan;

namespace {

// Images are given in [0, 1] units and stored in [-1, 1] like every tensor image.
Tensor constant_image(double unit, std::size_t size = 16) {
  return Tensor::full({3, size, size}, static_cast<float>(2 * unit - 1));
}

Tensor random_image(Rng& r, std::size_t h = 16, std::size_t w = 16) {
  std::vector<float> v(3 * h * w);
  for (auto& x : v) x = static_cast<float>(r.uniform(-1, 1));
  return Tensor({3, h, w}, std::move(v));
}

}  // namespace

TEST(Mse, Examples) {
  Rng r(1);
  const auto a = random_image(r);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(mse(constant_image(0), constant_image(1)), 1.0);
  EXPECT_EQ(rmse(constant_image(0), constant_image(1)), 1.0);
  EXPECT_EQ(mse(constant_image(0), constant_image(0.5)), 0.25);
  EXPECT_EQ(rmse(constant_image(0), constant_image(0.5)), 0.5);
  EXPECT_THROW(mse(constant_image(0, 16), constant_image(0, 8)), DimensionError);
}

TEST(Psnr, Examples) {
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
  EXPECT_EQ(psnr_from_mse(1.0), 0.0);
  EXPECT_TRUE(std::isinf(psnr(constant_image(0.3), constant_image(0.3))));
  EXPECT_NEAR(psnr(constant_image(0), constant_image(0.1)), 20.0, 1e-5);
}

TEST(Psnr, StrictlyDecreasingInMse) {
  double prev = INFINITY;
  for (int k = 1; k <= 100; ++k) {
    const double p = psnr_from_mse(k * 0.01);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, IdenticalIsOne) {
  Rng r(2);
  const auto a = random_image(r, 24, 16);
  EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, ConstantPairMatchesSingleWindowFormula) {
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(constant_image(0, 8), constant_image(1, 8)), c1 / (1 + c1), 1e-15);
  EXPECT_NEAR(ssim(constant_image(0, 32), constant_image(1, 32)), c1 / (1 + c1), 1e-15);
}

TEST(Ssim, SymmetricAndBounded) {
  Rng r(3);
  for (int k = 0; k < 20; ++k) {
    const auto a = random_image(r), b = random_image(r);
    EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
    EXPECT_GE(ssim(a, b), -1.0);
    EXPECT_LE(ssim(a, b), 1.0);
  }
  EXPECT_THROW(ssim(constant_image(0, 4), constant_image(0, 4)), DimensionError);
}

TEST(Metrics, RmseSquaredEqualsMse) {
  Rng r(4);
  for (int k = 0; k < 100; ++k) {
    const auto a = random_image(r), b = random_image(r);
    const auto m = measure(a, b);
    EXPECT_NEAR(m.rmse * m.rmse, m.mse, 1e-12 * m.mse);
  }
}

TEST(Metrics, InvariantUnderSharedPermutation) {
  Rng r(5);
  const auto a = random_image(r, 16, 16), b = random_image(r, 16, 16);
  // swap the two 8x8 windows of the top row in every channel of both images
  auto permute = [](const Tensor& t) {
    std::vector<float> v(t.data().begin(), t.data().end());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) std::swap(v[(c * 16 + y) * 16 + x], v[(c * 16 + y) * 16 + x + 8]);
    return Tensor(t.shape(), v);
  };
  const auto pa = permute(a), pb = permute(b);
  EXPECT_DOUBLE_EQ(mse(pa, pb), mse(a, b));
  EXPECT_DOUBLE_EQ(psnr(pa, pb), psnr(a, b));
  EXPECT_NEAR(ssim(pa, pb), ssim(a, b), 1e-15);
}

TEST(Report, CorpusMeansAndEmptyCorpus) {
  Rng r(6);
  MetricReport rep;
  std::vector<double> col;
  for (int k = 0; k < 7; ++k) {
    const auto a = random_image(r), b = random_image(r);
    rep.add(measure(a, b, "img" + std::to_string(k)));
    col.push_back(ssim(a, b));
  }
  rep.finalize();
  double s = 0;
  for (double v : col) s += v;
  EXPECT_NEAR(rep.ssim, s / 7, 1e-15);
  EXPECT_EQ(rep.count(), 7u);

  MetricReport empty;
  EXPECT_THROW(empty.finalize(), ContractError);
}

TEST(Report, CsvAndSummaryFormat) {
  MetricReport rep;
  rep.add(measure(constant_image(0.2), constant_image(0.2), "same.ppm"));
  rep.finalize();
  std::ostringstream csv, summary;
  write_per_image_csv(csv, rep);
  EXPECT_EQ(csv.str(), "path,psnr,mse,rmse,ssim\nsame.ppm,inf,0.000000,0.000000,1.000000\n");
  print_summary(summary, rep);
  const auto text = summary.str();
  EXPECT_LT(text.find("P-SNR"), text.find("MSE"));
  EXPECT_LT(text.find("MSE"), text.find("R-MSE"));
  EXPECT_LT(text.find("R-MSE"), text.find("SSIM"));
}
