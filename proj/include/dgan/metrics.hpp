#pragma once

// Full-reference image quality: MSE, RMSE, PSNR and single-scale SSIM.
//
// Inputs are [C, H, W] (or [1, C, H, W]) tensors in [-1, 1]; every metric
// first maps values to [0, 1] by (x + 1) / 2, so the PSNR peak is 1.
// SSIM works on luma (0.299 R + 0.587 G + 0.114 B for 3-channel inputs)
// over non-overlapping 8x8 windows with population statistics and
// C1 = (0.01 peak)^2, C2 = (0.03 peak)^2; trailing rows/columns that do not
// fill a window are ignored.

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dgan/tensor.hpp"

namespace dgan {

constexpr std::size_t kSsimWindow = 8;

namespace detail {

inline void require_same_image_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

inline double to_unit(float v) { return (static_cast<double>(v) + 1.0) * 0.5; }

// [H*W] luma in [0, 1]
inline std::vector<double> luma(const Tensor& t, std::size_t& h, std::size_t& w) {
  const std::size_t off = t.rank() == 4 ? 1 : 0;
  if (t.rank() - off != 3) throw DimensionError("expected an image tensor, got " + t.shape().str());
  const std::size_t c = t.dim(off);
  h = t.dim(off + 1);
  w = t.dim(off + 2);
  const std::size_t hw = h * w;
  std::vector<double> y(hw);
  auto d = t.data();
  for (std::size_t i = 0; i < hw; ++i) {
    if (c == 3)
      y[i] = 0.299 * to_unit(d[i]) + 0.587 * to_unit(d[hw + i]) + 0.114 * to_unit(d[2 * hw + i]);
    else if (c == 1)
      y[i] = to_unit(d[i]);
    else
      throw DimensionError("ssim expects 1 or 3 channels, got " + t.shape().str());
  }
  return y;
}

}  // namespace detail

inline double mse(const Tensor& a, const Tensor& b) {
  detail::require_same_image_shape(a, b, "mse");
  auto x = a.data();
  auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = detail::to_unit(x[i]) - detail::to_unit(y[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

inline double rmse(const Tensor& a, const Tensor& b) { return std::sqrt(mse(a, b)); }

/// 10 log10(peak^2 / mse); +inf when mse == 0.
inline double psnr_from_mse(double m, double peak = 1.0) {
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  return psnr_from_mse(mse(a, b), peak);
}

/// SSIM of one window given its statistics.
inline double ssim_window(double mu_a, double mu_b, double var_a, double var_b, double cov,
                          double peak = 1.0) {
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

inline double ssim(const Tensor& a, const Tensor& b) {
  detail::require_same_image_shape(a, b, "ssim");
  std::size_t h = 0, w = 0;
  const auto ya = detail::luma(a, h, w);
  const auto yb = detail::luma(b, h, w);
  if (h < kSsimWindow || w < kSsimWindow)
    throw DimensionError("ssim: image " + a.shape().str() + " is smaller than one 8x8 window");
  const double n = static_cast<double>(kSsimWindow * kSsimWindow);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t wy = 0; wy + kSsimWindow <= h; wy += kSsimWindow)
    for (std::size_t wx = 0; wx + kSsimWindow <= w; wx += kSsimWindow) {
      double sa = 0, sb = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i)
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          sa += ya[(wy + i) * w + wx + j];
          sb += yb[(wy + i) * w + wx + j];
        }
      const double ma = sa / n, mb = sb / n;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i)
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          const double da = ya[(wy + i) * w + wx + j] - ma;
          const double db = yb[(wy + i) * w + wx + j] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      total += ssim_window(ma, mb, va / n, vb / n, cov / n);
      ++windows;
    }
  return total / static_cast<double>(windows);
}

struct ImageMetrics {
  std::string name;
  double psnr = 0, mse = 0, rmse = 0, ssim = 0;
};

inline ImageMetrics measure(const Tensor& output, const Tensor& target, std::string name = {}) {
  ImageMetrics m;
  m.name = std::move(name);
  m.mse = mse(output, target);
  m.rmse = std::sqrt(m.mse);
  m.psnr = psnr_from_mse(m.mse);
  m.ssim = ssim(output, target);
  return m;
}

struct MetricReport {
  std::vector<ImageMetrics> images;
  double psnr = 0, mse = 0, rmse = 0, ssim = 0;  // corpus means

  std::size_t count() const { return images.size(); }

  void add(ImageMetrics m) { images.push_back(std::move(m)); }

  /// Recomputes the corpus means from the per-image rows.
  void finalize() {
    if (images.empty()) throw ContractError("metric report: empty corpus");
    psnr = mse = rmse = ssim = 0;
    for (const auto& m : images) {
      psnr += m.psnr;
      mse += m.mse;
      rmse += m.rmse;
      ssim += m.ssim;
    }
    const double n = static_cast<double>(images.size());
    psnr /= n;
    mse /= n;
    rmse /= n;
    ssim /= n;
  }
};

/// Fixed-point text for CSV cells; infinities print as "inf".
inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// "path,psnr,mse,rmse,ssim" rows.
inline void write_per_image_csv(std::ostream& out, const MetricReport& r) {
  out << "path,psnr,mse,rmse,ssim\n";
  for (const auto& m : r.images)
    out << m.name << ',' << format_metric(m.psnr) << ',' << format_metric(m.mse) << ','
        << format_metric(m.rmse) << ',' << format_metric(m.ssim) << '\n';
}

/// Corpus summary in P-SNR / MSE / R-MSE / SSIM column order.
inline void print_summary(std::ostream& out, const MetricReport& r, const std::string& label = "model") {
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %12s %12s %12s %12s\n", "Method", "P-SNR", "MSE", "R-MSE", "SSIM");
  out << line;
  std::snprintf(line, sizeof line, "%-24s %12s %12s %12s %12s\n", label.c_str(), format_metric(r.psnr).c_str(),
                format_metric(r.mse).c_str(), format_metric(r.rmse).c_str(), format_metric(r.ssim).c_str());
  out << line;
}

}  // namespace dgan
