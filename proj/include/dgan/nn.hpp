#pragma once

// Convolution, normalization and activation layers over BasicTensor.
// Image tensors use [batch, channel, height, width] layout.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

template <class T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedTensor<T>>;

/// Sum of element counts.
template <class T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

constexpr float kLeakySlope = 0.2f;
constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;
constexpr double kInitStd = 0.02;

/// Truncated at two standard deviations.
inline double truncated_gaussian(Rng& rng, double mean, double stddev) {
  for (;;) {
    const double z = rng.gaussian();
    if (std::abs(z) <= 2.0) return mean + stddev * z;
  }
}

// ---------------------------------------------------------------------------
// Convolution

template <class T>
struct Conv2dParams {
  BasicTensor<T> weight;  // conv2d: [out, in, k, k]; conv2d_transpose: [in, out, k, k]
  BasicTensor<T> bias;    // one entry per produced channel
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t kernel() const { return weight.dim(2); }

  void collect(const std::string& prefix, ParamList<T>& params) const {
    params.push_back({prefix + "weight", weight});
    params.push_back({prefix + "bias", bias});
  }

  /// Standard conv layer: weight [out, in, k, k], truncated N(0, 0.02), zero bias.
  static Conv2dParams make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                           std::size_t padding, Rng& rng, double stddev = kInitStd) {
    return make_raw(out, in, k, out, stride, padding, rng, stddev);
  }
  /// Transposed conv layer: weight [in, out, k, k].
  static Conv2dParams make_transposed(std::size_t in, std::size_t out, std::size_t k,
                                      std::size_t stride, std::size_t padding, Rng& rng,
                                      double stddev = kInitStd) {
    return make_raw(in, out, k, out, stride, padding, rng, stddev);
  }

 private:
  static Conv2dParams make_raw(std::size_t d0, std::size_t d1, std::size_t k,
                               std::size_t bias_len, std::size_t stride, std::size_t padding,
                               Rng& rng, double stddev) {
    std::vector<T> w(d0 * d1 * k * k);
    for (auto& v : w) v = static_cast<T>(truncated_gaussian(rng, 0.0, stddev));
    return {BasicTensor<T>(Shape{d0, d1, k, k}, std::move(w), true),
            BasicTensor<T>::zeros(Shape{bias_len}, true), stride, padding};
  }
};

inline std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride,
                                    std::size_t pad) {
  const long long span = static_cast<long long>(in + 2 * pad) - static_cast<long long>(k);
  if (span < 0 || stride == 0) return 0;
  return static_cast<std::size_t>(span) / stride + 1;
}

inline std::size_t conv_transpose_output_size(std::size_t in, std::size_t k, std::size_t stride,
                                              std::size_t pad) {
  const long long out = static_cast<long long>((in - 1) * stride + k) - 2 * static_cast<long long>(pad);
  return out < 1 ? 0 : static_cast<std::size_t>(out);
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_h * out_w; }
};

// image [C, H, W] -> columns [C*k*k, out_h*out_w]
template <class T>
void im2col(const T* image, const ConvGeometry& g, T* columns) {
  const long long pad = static_cast<long long>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = columns + ((c * g.kernel + ki) * g.kernel + kj) * g.cols();
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long long y = static_cast<long long>(oi * g.stride + ki) - pad;
          T* dst = row + oi * g.out_w;
          if (y < 0 || y >= static_cast<long long>(g.height)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long long x = static_cast<long long>(oj * g.stride + kj) - pad;
            dst[oj] = (x < 0 || x >= static_cast<long long>(g.width)) ? T(0)
                                                                       : src[static_cast<std::size_t>(x)];
          }
        }
      }
}

// columns [C*k*k, out_h*out_w] accumulated into image [C, H, W]
template <class T>
void col2im(const T* columns, const ConvGeometry& g, T* image) {
  const long long pad = static_cast<long long>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = columns + ((c * g.kernel + ki) * g.kernel + kj) * g.cols();
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long long y = static_cast<long long>(oi * g.stride + ki) - pad;
          if (y < 0 || y >= static_cast<long long>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const T* src = row + oi * g.out_w;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long long x = static_cast<long long>(oj * g.stride + kj) - pad;
            if (x >= 0 && x < static_cast<long long>(g.width)) dst[static_cast<std::size_t>(x)] += src[oj];
          }
        }
      }
}

// Stride-1 convolution without an im2col buffer: every (out, in, ki, kj)
// tap is a row-wise axpy over shifted planes. Used when few output channels
// would leave a GEMM starved while im2col traffic dominates.
constexpr std::size_t kDirectConvMaxOut = 8;

// Valid output column range [j0, j1) for tap offset kj (input column j + kj - pad).
inline void tap_columns(std::size_t kj, std::size_t pad, std::size_t in_w, std::size_t out_w,
                        std::size_t& j0, std::size_t& j1) {
  j0 = kj < pad ? pad - kj : 0;
  const long long hi = static_cast<long long>(in_w + pad) - static_cast<long long>(kj);
  j1 = static_cast<std::size_t>(std::clamp<long long>(hi, 0, static_cast<long long>(out_w)));
  if (j1 < j0) j1 = j0;
}

// y[o] += sum_{c,ki,kj} w[o,c,ki,kj] * x[c] shifted; one batch element.
template <class T>
void direct_conv_forward(const T* x, const T* w, const ConvGeometry& g, std::size_t out_ch, T* y) {
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t ki = 0; ki < g.kernel; ++ki)
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          const T wv = w[((o * g.channels + c) * g.kernel + ki) * g.kernel + kj];
          std::size_t j0, j1;
          tap_columns(kj, g.pad, g.width, g.out_w, j0, j1);
          for (std::size_t i = 0; i < g.out_h; ++i) {
            const long long r = static_cast<long long>(i + ki) - static_cast<long long>(g.pad);
            if (r < 0 || r >= static_cast<long long>(g.height)) continue;
            const T* xr = x + (c * g.height + static_cast<std::size_t>(r)) * g.width + kj - g.pad;
            T* yr = y + (o * g.out_h + i) * g.out_w;
            for (std::size_t j = j0; j < j1; ++j) yr[j] += wv * xr[j];
          }
        }
}

template <class T>
void direct_conv_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g,
                          std::size_t out_ch, T* dx, T* dw) {
  std::vector<T> acc(g.out_w);
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t ki = 0; ki < g.kernel; ++ki)
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          const std::size_t widx = ((o * g.channels + c) * g.kernel + ki) * g.kernel + kj;
          const T wv = w[widx];
          std::size_t j0, j1;
          tap_columns(kj, g.pad, g.width, g.out_w, j0, j1);
          std::fill(acc.begin(), acc.end(), T(0));
          for (std::size_t i = 0; i < g.out_h; ++i) {
            const long long r = static_cast<long long>(i + ki) - static_cast<long long>(g.pad);
            if (r < 0 || r >= static_cast<long long>(g.height)) continue;
            const std::size_t xoff = (c * g.height + static_cast<std::size_t>(r)) * g.width + kj - g.pad;
            const T* dyr = dy + (o * g.out_h + i) * g.out_w;
            if (dw) {
              const T* xr = x + xoff;
              for (std::size_t j = j0; j < j1; ++j) acc[j] += dyr[j] * xr[j];
            }
            if (dx) {
              T* dxr = dx + xoff;
              for (std::size_t j = j0; j < j1; ++j) dxr[j] += wv * dyr[j];
            }
          }
          if (dw) {
            T sum = 0;
            for (std::size_t j = j0; j < j1; ++j) sum += acc[j];
            dw[widx] += sum;
          }
        }
}

}  // namespace detail

/// Cross-correlation with zero padding, plus bias.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const Conv2dParams<T>& p) {
  if (x.rank() != 4) throw DimensionError("conv2d expects rank-4 input, got " + x.shape().str());
  const auto& w = p.weight;
  const std::size_t n = x.dim(0), out_ch = w.dim(0), in_ch = w.dim(1), k = w.dim(2);
  if (x.dim(1) != in_ch)
    throw DimensionError("conv2d: input " + x.shape().str() + " vs weight " + w.shape().str() +
                         " channel mismatch");
  if (p.bias.numel() != out_ch) throw DimensionError("conv2d: bias length must equal out channels");
  const detail::ConvGeometry g{in_ch, x.dim(2), x.dim(3), k, p.stride, p.padding,
                               conv_output_size(x.dim(2), k, p.stride, p.padding),
                               conv_output_size(x.dim(3), k, p.stride, p.padding)};
  if (g.out_h < 1 || g.out_w < 1)
    throw DimensionError("conv2d: output size < 1 for input " + x.shape().str());

  const std::size_t in_size = in_ch * g.height * g.width, out_size = out_ch * g.cols();
  const bool direct = p.stride == 1 && out_ch <= detail::kDirectConvMaxOut;
  std::vector<T> out(n * out_size);
  std::vector<T> cols(direct ? 0 : g.rows() * g.cols());
  detail::ConstMatMap<T> wm(w.data().data(), out_ch, g.rows());
  for (std::size_t b = 0; b < n; ++b) {
    if (direct) {
      T* y = out.data() + b * out_size;
      for (std::size_t o = 0; o < out_ch; ++o) std::fill_n(y + o * g.cols(), g.cols(), p.bias[o]);
      detail::direct_conv_forward(x.data().data() + b * in_size, w.data().data(), g, out_ch, y);
      continue;
    }
    detail::im2col(x.data().data() + b * in_size, g, cols.data());
    detail::MatMap<T> ym(out.data() + b * out_size, out_ch, g.cols());
    ym.noalias() = wm * detail::ConstMatMap<T>(cols.data(), g.rows(), g.cols());
    for (std::size_t o = 0; o < out_ch; ++o) ym.row(o).array() += p.bias[o];
  }

  auto *px = x.node(), *pw = w.node(), *pb = p.bias.node();
  return make_result<T>(
      Shape{n, out_ch, g.out_h, g.out_w}, std::move(out), "conv2d", {&x, &w, &p.bias},
      [=](detail::Node<T>& self) {
        auto* gx = grad_sink(px);
        auto* gw = grad_sink(pw);
        auto* gb = grad_sink(pb);
        std::vector<T> cols(direct ? 0 : g.rows() * g.cols());
        detail::ConstMatMap<T> wm(pw->data.data(), out_ch, g.rows());
        for (std::size_t b = 0; b < n; ++b) {
          detail::ConstMatMap<T> dy(self.grad.data() + b * out_size, out_ch, g.cols());
          if (gb)
            for (std::size_t o = 0; o < out_ch; ++o) {
              const T* row = self.grad.data() + b * out_size + o * g.cols();
              T acc = 0;
              for (std::size_t i = 0; i < g.cols(); ++i) acc += row[i];
              (*gb)[o] += acc;
            }
          if (direct) {
            if (gx || gw)
              detail::direct_conv_backward(px->data.data() + b * in_size, pw->data.data(),
                                           self.grad.data() + b * out_size, g, out_ch,
                                           gx ? gx->data() + b * in_size : nullptr,
                                           gw ? gw->data() : nullptr);
            continue;
          }
          if (gw) {
            detail::im2col(px->data.data() + b * in_size, g, cols.data());
            detail::MatMap<T>(gw->data(), out_ch, g.rows()).noalias() +=
                dy * detail::ConstMatMap<T>(cols.data(), g.rows(), g.cols()).transpose();
          }
          if (gx) {
            detail::MatMap<T>(cols.data(), g.rows(), g.cols()).noalias() = wm.transpose() * dy;
            detail::col2im(cols.data(), g, gx->data() + b * in_size);
          }
        }
      });
}

/// Adjoint of conv2d with the same weight tensor: maps weight.dim(0) channels
/// to weight.dim(1) channels; out = (H - 1) * stride - 2 * pad + k.
template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x, const Conv2dParams<T>& p) {
  if (x.rank() != 4)
    throw DimensionError("conv2d_transpose expects rank-4 input, got " + x.shape().str());
  const auto& w = p.weight;
  const std::size_t n = x.dim(0), in_ch = w.dim(0), out_ch = w.dim(1), k = w.dim(2);
  if (x.dim(1) != in_ch)
    throw DimensionError("conv2d_transpose: input " + x.shape().str() + " vs weight " +
                         w.shape().str() + " channel mismatch");
  if (p.bias.numel() != out_ch)
    throw DimensionError("conv2d_transpose: bias length must equal out channels");
  const std::size_t in_h = x.dim(2), in_w = x.dim(3);
  const std::size_t out_h = conv_transpose_output_size(in_h, k, p.stride, p.padding);
  const std::size_t out_w = conv_transpose_output_size(in_w, k, p.stride, p.padding);
  if (out_h < 1 || out_w < 1)
    throw DimensionError("conv2d_transpose: output size < 1 for input " + x.shape().str());
  // Geometry of the forward convolution this op is the adjoint of.
  const detail::ConvGeometry g{out_ch, out_h, out_w, k, p.stride, p.padding, in_h, in_w};
  if (conv_output_size(out_h, k, p.stride, p.padding) != in_h)
    throw DimensionError("conv2d_transpose: inconsistent geometry");

  const std::size_t in_size = in_ch * in_h * in_w, out_size = out_ch * out_h * out_w;
  std::vector<T> out(n * out_size, T(0));
  std::vector<T> cols(g.rows() * g.cols());
  detail::ConstMatMap<T> wm(w.data().data(), in_ch, g.rows());
  for (std::size_t b = 0; b < n; ++b) {
    detail::MatMap<T>(cols.data(), g.rows(), g.cols()).noalias() =
        wm.transpose() * detail::ConstMatMap<T>(x.data().data() + b * in_size, in_ch, g.cols());
    T* y = out.data() + b * out_size;
    detail::col2im(cols.data(), g, y);
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t i = 0; i < out_h * out_w; ++i) y[o * out_h * out_w + i] += p.bias[o];
  }

  auto *px = x.node(), *pw = w.node(), *pb = p.bias.node();
  return make_result<T>(
      Shape{n, out_ch, out_h, out_w}, std::move(out), "conv2d_transpose", {&x, &w, &p.bias},
      [=](detail::Node<T>& self) {
        auto* gx = grad_sink(px);
        auto* gw = grad_sink(pw);
        auto* gb = grad_sink(pb);
        std::vector<T> cols(g.rows() * g.cols());
        detail::ConstMatMap<T> wm(pw->data.data(), in_ch, g.rows());
        for (std::size_t b = 0; b < n; ++b) {
          const T* dy = self.grad.data() + b * out_size;
          if (gb)
            for (std::size_t o = 0; o < out_ch; ++o) {
              T acc = 0;
              for (std::size_t i = 0; i < out_h * out_w; ++i) acc += dy[o * out_h * out_w + i];
              (*gb)[o] += acc;
            }
          if (!gx && !gw) continue;
          detail::im2col(dy, g, cols.data());
          detail::ConstMatMap<T> dcols(cols.data(), g.rows(), g.cols());
          if (gx)
            detail::MatMap<T>(gx->data() + b * in_size, in_ch, g.cols()).noalias() += wm * dcols;
          if (gw)
            detail::MatMap<T>(gw->data(), in_ch, g.rows()).noalias() +=
                detail::ConstMatMap<T>(px->data.data() + b * in_size, in_ch, g.cols()) *
                dcols.transpose();
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BatchNormMode {
  kTrain,       // batch statistics, running statistics updated
  kBatchStats,  // batch statistics, running statistics left alone
  kEval,        // running statistics
};

template <class T>
struct BatchNormParams {
  BasicTensor<T> gamma, beta;                 // learnable, one per channel
  BasicTensor<T> running_mean, running_var;   // buffers
  double eps = kBatchNormEps;
  double momentum = kBatchNormMomentum;
  BatchNormMode mode = BatchNormMode::kTrain;

  std::size_t channels() const { return gamma.numel(); }

  void collect(const std::string& prefix, ParamList<T>& params) const {
    params.push_back({prefix + "gamma", gamma});
    params.push_back({prefix + "beta", beta});
  }
  void collect_buffers(const std::string& prefix, ParamList<T>& buffers) const {
    buffers.push_back({prefix + "running_mean", running_mean});
    buffers.push_back({prefix + "running_var", running_var});
  }

  /// gamma ~ N(1, 0.02) truncated, beta = 0, running stats (0, 1).
  static BatchNormParams make(std::size_t channels, Rng& rng) {
    std::vector<T> g(channels);
    for (auto& v : g) v = static_cast<T>(truncated_gaussian(rng, 1.0, kInitStd));
    return {BasicTensor<T>(Shape{channels}, std::move(g), true),
            BasicTensor<T>::zeros(Shape{channels}, true), BasicTensor<T>::zeros(Shape{channels}),
            BasicTensor<T>::full(Shape{channels}, T(1))};
  }
};

template <class T>
BasicTensor<T> batchnorm(const BasicTensor<T>& x, BatchNormParams<T>& p) {
  if (x.rank() != 4) throw DimensionError("batchnorm expects rank-4 input, got " + x.shape().str());
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c != p.channels())
    throw DimensionError("batchnorm: input " + x.shape().str() + " vs " +
                         std::to_string(p.channels()) + " channels");
  const std::size_t count = n * hw;
  const bool batch_stats = p.mode != BatchNormMode::kEval;
  if (batch_stats && count < 2)
    throw ContractError("batchnorm: degenerate statistics, batch*H*W = " + std::to_string(count));

  auto xs = x.data();
  std::vector<T> mean(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (batch_stats) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += xs[(b * c + ch) * hw + i];
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xs[(b * c + ch) * hw + i] - mu;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + p.eps));
      if (p.mode == BatchNormMode::kTrain) {
        auto rm = p.running_mean.mutable_data();
        auto rv = p.running_var.mutable_data();
        const double unbiased = ss / static_cast<double>(count - 1);
        rm[ch] = static_cast<T>((1.0 - p.momentum) * rm[ch] + p.momentum * mu);
        rv[ch] = static_cast<T>((1.0 - p.momentum) * rv[ch] + p.momentum * unbiased);
      }
    } else {
      mean[ch] = p.running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.running_var[ch]) + p.eps));
    }
  }

  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = p.gamma[ch], be = p.beta[ch], mu = mean[ch], is = inv_std[ch];
      const std::size_t base = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = g * ((xs[base + i] - mu) * is) + be;
    }

  auto *px = x.node(), *pg = p.gamma.node(), *pbeta = p.beta.node();
  return make_result<T>(
      x.shape(), std::move(out), "batchnorm", {&x, &p.gamma, &p.beta},
      [=](detail::Node<T>& self) {
        auto* gx = grad_sink(px);
        auto* gg = grad_sink(pg);
        auto* gb = grad_sink(pbeta);
        const auto& dy = self.grad;
        const auto& xv = px->data;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T mu = mean[ch], is = inv_std[ch], g = pg->data[ch];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (b * c + ch) * hw + i;
              sum_dy += dy[idx];
              sum_dy_xhat += dy[idx] * ((xv[idx] - mu) * is);
            }
          if (gg) (*gg)[ch] += static_cast<T>(sum_dy_xhat);
          if (gb) (*gb)[ch] += static_cast<T>(sum_dy);
          if (!gx) continue;
          if (batch_stats) {
            const T m = static_cast<T>(count);
            const T mean_dy = static_cast<T>(sum_dy) / m;
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat) / m;
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (b * c + ch) * hw + i;
                const T xhat = (xv[idx] - mu) * is;
                (*gx)[idx] += g * is * (dy[idx] - mean_dy - xhat * mean_dy_xhat);
              }
          } else {
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (b * c + ch) * hw + i;
                (*gx)[idx] += g * is * dy[idx];
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  auto* px = x.node();
  return make_result<T>(x.shape(), detail::map(x, [](T v) { return v > 0 ? v : T(0); }), "relu",
                        {&x}, [px](detail::Node<T>& self) {
                          if (auto* g = grad_sink(px))
                            for (std::size_t i = 0; i < g->size(); ++i)
                              if (px->data[i] > 0) (*g)[i] += self.grad[i];
                        });
}

template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope = T(kLeakySlope)) {
  auto* px = x.node();
  return make_result<T>(x.shape(), detail::map(x, [slope](T v) { return v > 0 ? v : v * slope; }),
                        "leaky_relu", {&x}, [px, slope](detail::Node<T>& self) {
                          if (auto* g = grad_sink(px))
                            for (std::size_t i = 0; i < g->size(); ++i)
                              (*g)[i] += px->data[i] > 0 ? self.grad[i] : self.grad[i] * slope;
                        });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  auto out = detail::map(x, [](T v) { return std::tanh(v); });
  auto* px = x.node();
  return make_result<T>(x.shape(), out, "tanh", {&x}, [px, out](detail::Node<T>& self) {
    if (auto* g = grad_sink(px))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (T(1) - out[i] * out[i]);
  });
}

/// Logistic function, kept strictly inside (0, 1) at the precision of T.
template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
  auto out = detail::map(x, [lo, hi](T v) {
    const T s = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    return std::clamp(s, lo, hi);
  });
  auto* px = x.node();
  return make_result<T>(x.shape(), out, "sigmoid", {&x}, [px, out](detail::Node<T>& self) {
    if (auto* g = grad_sink(px))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * out[i] * (T(1) - out[i]);
  });
}

/// 2x2 max pooling, stride 2; ties go to the first element in raster order.
template <class T>
BasicTensor<T> max_pool2x2(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("max_pool2x2 expects rank-4, got " + x.shape().str());
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho < 1 || wo < 1) throw DimensionError("max_pool2x2: input too small " + x.shape().str());
  std::vector<T> out(n * c * ho * wo);
  std::vector<std::size_t> arg(out.size());
  auto xs = x.data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (p * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (p * h + 2 * i + di) * w + 2 * j + dj;
            if (xs[idx] > xs[best]) best = idx;
          }
        const std::size_t o = (p * ho + i) * wo + j;
        out[o] = xs[best];
        arg[o] = best;
      }
  auto* px = x.node();
  return make_result<T>(Shape{n, c, ho, wo}, std::move(out), "max_pool2x2", {&x},
                        [px, arg = std::move(arg)](detail::Node<T>& self) {
                          if (auto* g = grad_sink(px))
                            for (std::size_t o = 0; o < arg.size(); ++o) (*g)[arg[o]] += self.grad[o];
                        });
}

// ---------------------------------------------------------------------------
// Residual block: y = f(x) + x with f = conv -> BN -> ReLU -> conv -> BN.

template <class T>
struct ResidualBlockParams {
  Conv2dParams<T> conv1, conv2;
  BatchNormParams<T> bn1, bn2;

  void collect(const std::string& prefix, ParamList<T>& params) const {
    conv1.collect(prefix + "conv1.", params);
    bn1.collect(prefix + "bn1.", params);
    conv2.collect(prefix + "conv2.", params);
    bn2.collect(prefix + "bn2.", params);
  }
  void collect_buffers(const std::string& prefix, ParamList<T>& buffers) const {
    bn1.collect_buffers(prefix + "bn1.", buffers);
    bn2.collect_buffers(prefix + "bn2.", buffers);
  }
  void set_mode(BatchNormMode m) { bn1.mode = bn2.mode = m; }

  static ResidualBlockParams make(std::size_t channels, Rng& rng) {
    ResidualBlockParams r;
    r.conv1 = Conv2dParams<T>::make(channels, channels, 3, 1, 1, rng);
    r.bn1 = BatchNormParams<T>::make(channels, rng);
    r.conv2 = Conv2dParams<T>::make(channels, channels, 3, 1, 1, rng);
    r.bn2 = BatchNormParams<T>::make(channels, rng);
    return r;
  }
};

/// The residual branch f alone.
template <class T>
BasicTensor<T> residual_branch(const BasicTensor<T>& x, ResidualBlockParams<T>& p) {
  const std::size_t ch = p.conv1.weight.dim(0);
  if (p.conv1.weight.dim(1) != ch || p.conv2.weight.dim(0) != ch || p.conv2.weight.dim(1) != ch ||
      x.dim(1) != ch)
    throw DimensionError("residual_block: input " + x.shape().str() +
                         " must match the block's channel count " + std::to_string(ch));
  auto h = relu(batchnorm(conv2d(x, p.conv1), p.bn1));
  return batchnorm(conv2d(h, p.conv2), p.bn2);
}

template <class T>
BasicTensor<T> residual_block(const BasicTensor<T>& x, ResidualBlockParams<T>& p) {
  return add(residual_branch(x, p), x);
}

}  // namespace dgan
