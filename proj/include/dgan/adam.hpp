#pragma once

// Adam with bias correction:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)

#include <cmath>
#include <string>
#include <vector>

#include "dgan/nn.hpp"

namespace dgan {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T = float>
class Adam {
 public:
  Adam(ParamList<T> params, AdamConfig cfg = {}) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.push_back(BasicTensor<T>::zeros(p.tensor.shape()));
      v_.push_back(BasicTensor<T>::zeros(p.tensor.shape()));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }
  const ParamList<T>& parameters() const { return params_; }

  /// Applies one update from the accumulated grads. Every parameter must
  /// carry a gradient buffer.
  void step() {
    for (const auto& p : params_)
      if (p.tensor.grad().empty())
        throw ContractError("adam: parameter '" + p.name + "' has no gradient");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& param = params_[k].tensor;
      auto g = param.grad();
      auto w = param.mutable_data();
      auto m = m_[k].mutable_data();
      auto v = v_[k].mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const double m_hat = static_cast<double>(m[i]) / bc1;
        const double v_hat = static_cast<double>(v[i]) / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  /// Moment buffers and the step counter, for checkpoints.
  ParamList<T> state(const std::string& prefix) const {
    ParamList<T> s;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      s.push_back({prefix + "m/" + params_[k].name, m_[k]});
      s.push_back({prefix + "v/" + params_[k].name, v_[k]});
    }
    return s;
  }

  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  ParamList<T> params_;
  std::vector<BasicTensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace dgan
