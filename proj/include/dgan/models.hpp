#pragma once

// Generator, patch discriminator and the frozen cascade feature network.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dgan/nn.hpp"

namespace dgan {

struct GeneratorConfig {
  std::size_t input_channels = 5;
  std::size_t base_width = 64;
  std::size_t num_res_blocks = 9;
  std::size_t output_channels = 3;
  std::size_t image_size = 256;
  // When off, zeros are concatenated where encoder activations would be.
  bool skips = true;

  void validate() const {
    if (image_size == 0 || image_size % 4 != 0)
      throw ContractError("generator image_size must be a positive multiple of 4, got " +
                          std::to_string(image_size));
    if (num_res_blocks < 1) throw ContractError("generator needs at least one residual block");
    if (input_channels < 1 || base_width < 1 || output_channels < 1)
      throw ContractError("generator channel counts must be positive");
  }
};

/// Encoder (k7s1 stem, two k4s2 downsamplers; conv-BN-ReLU), residual
/// bottleneck at 1/4 resolution, decoder (two k4s2 deconvs with BN and
/// LeakyReLU, k7s1 RGB head, Tanh). Each decoder stage consumes the
/// matching encoder activation concatenated on the channel axis.
template <class T>
class Generator {
 public:
  struct Encoded {
    BasicTensor<T> full, half, quarter;
  };

  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t w = cfg.base_width;
    stem_ = Conv2dParams<T>::make(cfg.input_channels, w, 7, 1, 3, rng);
    stem_bn_ = BatchNormParams<T>::make(w, rng);
    down1_ = Conv2dParams<T>::make(w, 2 * w, 4, 2, 1, rng);
    down1_bn_ = BatchNormParams<T>::make(2 * w, rng);
    down2_ = Conv2dParams<T>::make(2 * w, 4 * w, 4, 2, 1, rng);
    down2_bn_ = BatchNormParams<T>::make(4 * w, rng);
    for (std::size_t i = 0; i < cfg.num_res_blocks; ++i)
      blocks_.push_back(ResidualBlockParams<T>::make(4 * w, rng));
    up1_ = Conv2dParams<T>::make_transposed(8 * w, 2 * w, 4, 2, 1, rng);
    up1_bn_ = BatchNormParams<T>::make(2 * w, rng);
    up2_ = Conv2dParams<T>::make_transposed(4 * w, w, 4, 2, 1, rng);
    up2_bn_ = BatchNormParams<T>::make(w, rng);
    head_ = Conv2dParams<T>::make(2 * w, cfg.output_channels, 7, 1, 3, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }

  Encoded encode(const BasicTensor<T>& x) {
    check_input(x);
    Encoded e;
    e.full = relu(batchnorm(conv2d(x, stem_), stem_bn_));
    e.half = relu(batchnorm(conv2d(e.full, down1_), down1_bn_));
    e.quarter = relu(batchnorm(conv2d(e.half, down2_), down2_bn_));
    return e;
  }

  BasicTensor<T> bottleneck(BasicTensor<T> h) {
    for (auto& b : blocks_) h = residual_block(h, b);
    return h;
  }

  BasicTensor<T> decode(const Encoded& e, const BasicTensor<T>& h) {
    auto u1 = leaky_relu(batchnorm(conv2d_transpose(concat_channels<T>({h, skip(e.quarter)}), up1_), up1_bn_));
    auto u2 = leaky_relu(batchnorm(conv2d_transpose(concat_channels<T>({u1, skip(e.half)}), up2_), up2_bn_));
    return tanh(conv2d(concat_channels<T>({u2, skip(e.full)}), head_));
  }

  BasicTensor<T> forward(const BasicTensor<T>& x) {
    auto e = encode(x);
    return decode(e, bottleneck(e.quarter));
  }

  std::vector<ResidualBlockParams<T>>& residual_blocks() { return blocks_; }

  void set_mode(BatchNormMode m) {
    for (auto* bn : {&stem_bn_, &down1_bn_, &down2_bn_, &up1_bn_, &up2_bn_}) bn->mode = m;
    for (auto& b : blocks_) b.set_mode(m);
  }

  ParamList<T> parameters() const {
    ParamList<T> p;
    stem_.collect("stem.conv.", p);
    stem_bn_.collect("stem.bn.", p);
    down1_.collect("down1.conv.", p);
    down1_bn_.collect("down1.bn.", p);
    down2_.collect("down2.conv.", p);
    down2_bn_.collect("down2.bn.", p);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("res" + std::to_string(i) + ".", p);
    up1_.collect("up1.deconv.", p);
    up1_bn_.collect("up1.bn.", p);
    up2_.collect("up2.deconv.", p);
    up2_bn_.collect("up2.bn.", p);
    head_.collect("head.conv.", p);
    return p;
  }

  ParamList<T> buffers() const {
    ParamList<T> b;
    stem_bn_.collect_buffers("stem.bn.", b);
    down1_bn_.collect_buffers("down1.bn.", b);
    down2_bn_.collect_buffers("down2.bn.", b);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect_buffers("res" + std::to_string(i) + ".", b);
    up1_bn_.collect_buffers("up1.bn.", b);
    up2_bn_.collect_buffers("up2.bn.", b);
    return b;
  }

 private:
  void check_input(const BasicTensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_channels || x.dim(2) != cfg_.image_size ||
        x.dim(3) != cfg_.image_size)
      throw DimensionError("generator expects [B," + std::to_string(cfg_.input_channels) + "," +
                           std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                           "], got " + x.shape().str());
  }

  BasicTensor<T> skip(const BasicTensor<T>& a) const {
    return cfg_.skips ? a : BasicTensor<T>::zeros(a.shape());
  }

  GeneratorConfig cfg_;
  Conv2dParams<T> stem_, down1_, down2_, up1_, up2_, head_;
  BatchNormParams<T> stem_bn_, down1_bn_, down2_bn_, up1_bn_, up2_bn_;
  std::vector<ResidualBlockParams<T>> blocks_;
};

// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
  std::size_t condition_channels = 5;
  std::size_t image_channels = 3;
  std::size_t layers = 4;
  std::size_t base_width = 64;

  void validate() const {
    if (layers < 1) throw ContractError("discriminator needs at least one strided layer");
    if (condition_channels < 1 || base_width < 1) throw ContractError("discriminator widths must be positive");
  }
};

/// Patch classifier on concat(condition, image): `layers` x (k4s2p1 conv,
/// BN except on the first, LeakyReLU 0.2), then a k4s1 conv with
/// shape-preserving padding (1 before, 2 after) and a sigmoid per cell.
/// Output is [B, 1, H / 2^layers, W / 2^layers].
template <class T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    std::size_t in = cfg.condition_channels + cfg.image_channels;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::size_t out = cfg.base_width << std::min<std::size_t>(l, 3);
      convs_.push_back(Conv2dParams<T>::make(in, out, 4, 2, 1, rng));
      if (l > 0) bns_.push_back(BatchNormParams<T>::make(out, rng));
      in = out;
    }
    final_ = Conv2dParams<T>::make(in, 1, 4, 1, 0, rng);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  /// Per-cell probabilities.
  BasicTensor<T> forward(const BasicTensor<T>& condition, const BasicTensor<T>& image) {
    if (condition.rank() != 4 || image.rank() != 4 || condition.dim(0) != image.dim(0) ||
        condition.dim(2) != image.dim(2) || condition.dim(3) != image.dim(3))
      throw DimensionError("discriminator: condition " + condition.shape().str() + " vs image " +
                           image.shape().str());
    if (condition.dim(1) != cfg_.condition_channels || image.dim(1) != cfg_.image_channels)
      throw DimensionError("discriminator: expected " + std::to_string(cfg_.condition_channels) +
                           "+" + std::to_string(cfg_.image_channels) + " channels, got " +
                           condition.shape().str() + " and " + image.shape().str());
    auto h = concat_channels<T>({condition, image});
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      h = conv2d(h, convs_[l]);
      if (l > 0) h = batchnorm(h, bns_[l - 1]);
      h = leaky_relu(h);
    }
    return sigmoid(conv2d(pad2d(h, 1, 2, 1, 2), final_));
  }

  /// Mean cell probability per batch element: [B].
  BasicTensor<T> score(const BasicTensor<T>& condition, const BasicTensor<T>& image) {
    return sample_mean(forward(condition, image));
  }

  void set_mode(BatchNormMode m) {
    for (auto& bn : bns_) bn.mode = m;
  }

  void set_requires_grad(bool on) {
    for (auto& p : parameters()) p.tensor.set_requires_grad(on);
  }

  ParamList<T> parameters() const {
    ParamList<T> p;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      convs_[l].collect("layer" + std::to_string(l) + ".conv.", p);
      if (l > 0) bns_[l - 1].collect("layer" + std::to_string(l) + ".bn.", p);
    }
    final_.collect("final.conv.", p);
    return p;
  }

  ParamList<T> buffers() const {
    ParamList<T> b;
    for (std::size_t l = 1; l < convs_.size(); ++l)
      bns_[l - 1].collect_buffers("layer" + std::to_string(l) + ".bn.", b);
    return b;
  }

 private:
  DiscriminatorConfig cfg_;
  std::vector<Conv2dParams<T>> convs_;
  std::vector<BatchNormParams<T>> bns_;
  Conv2dParams<T> final_;
};

// ---------------------------------------------------------------------------

struct CascadeNetConfig {
  std::vector<std::size_t> widths{64, 64, 128, 128, 256};
  std::uint64_t seed = 19;
  std::size_t image_channels = 3;

  std::size_t levels() const { return widths.size(); }
};

/// Frozen multi-level feature extractor: level n is a k3s1p1 conv + ReLU,
/// with 2x2 max pooling after levels 2 and 4 (the conv1_1..conv3_1 layout
/// of VGG-19). Weights are He-normal from a fixed seed unless replaced by
/// load_weights(); they never require gradients.
template <class T>
class CascadeNet {
 public:
  explicit CascadeNet(const CascadeNetConfig& cfg) : cfg_(cfg) {
    if (cfg.widths.empty()) throw ContractError("cascade network needs at least one level");
    Rng rng(cfg.seed);
    std::size_t in = cfg.image_channels;
    for (auto out : cfg.widths) {
      auto conv = Conv2dParams<T>::make(in, out, 3, 1, 1, rng, std::sqrt(2.0 / double(in * 9)));
      conv.weight.set_requires_grad(false);
      conv.bias.set_requires_grad(false);
      levels_.push_back(conv);
      in = out;
    }
  }

  const CascadeNetConfig& config() const { return cfg_; }
  std::size_t levels() const { return levels_.size(); }
  std::size_t calls() const { return calls_; }

  std::vector<BasicTensor<T>> features(const BasicTensor<T>& image) {
    ++calls_;
    std::vector<BasicTensor<T>> out;
    auto h = image;
    for (std::size_t n = 0; n < levels_.size(); ++n) {
      if (n == 2 || n == 4) h = max_pool2x2(h);
      h = relu(conv2d(h, levels_[n]));
      out.push_back(h);
    }
    return out;
  }

  ParamList<T> parameters() const {
    ParamList<T> p;
    for (std::size_t n = 0; n < levels_.size(); ++n) levels_[n].collect("level" + std::to_string(n) + ".", p);
    return p;
  }

 private:
  CascadeNetConfig cfg_;
  std::vector<Conv2dParams<T>> levels_;
  std::size_t calls_ = 0;
};

}  // namespace dgan
