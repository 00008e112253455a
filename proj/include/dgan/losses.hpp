#pragma once

// Adversarial, L1, perturbed and cascade losses and their weighted totals.
//
// Reductions are means throughout. Discriminator scores are clamped to
// [kScoreClamp, 1 - kScoreClamp] before any logarithm.

#include <string>
#include <vector>

#include "dgan/models.hpp"
#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

constexpr double kScoreClamp = 1e-7;

struct LossWeights {
  double gamma = 100.0;    // L1
  double theta_p = 1.0;    // perturbed (discriminator side)
  double sigma_c = 1.0;    // cascade
  std::vector<double> lambda;  // per cascade level; empty means 1/N each

  std::vector<double> level_weights(std::size_t levels) const {
    if (lambda.empty()) return std::vector<double>(levels, 1.0 / static_cast<double>(levels));
    if (lambda.size() != levels)
      throw ContractError("cascade lambda has " + std::to_string(lambda.size()) +
                          " entries for " + std::to_string(levels) + " levels");
    return lambda;
  }

  void validate() const {
    if (gamma < 0 || theta_p < 0 || sigma_c < 0) throw ContractError("loss weights must be >= 0");
    for (auto l : lambda)
      if (l < 0) throw ContractError("cascade lambda entries must be >= 0");
  }
};

struct LossBundle {
  float adv_d = 0, adv_g = 0, l1 = 0, perturbed = 0, cascade = 0, total_g = 0, total_d = 0;
};

namespace detail {
template <class T>
BasicTensor<T> clamp_scores(const BasicTensor<T>& s) {
  return clamp(s, static_cast<T>(kScoreClamp), static_cast<T>(1.0 - kScoreClamp));
}
}  // namespace detail

/// mean(-log s)
template <class T>
BasicTensor<T> neg_log_mean(const BasicTensor<T>& scores) {
  return scale(mean(log(detail::clamp_scores(scores))), T(-1));
}

/// mean(-log(1 - s))
template <class T>
BasicTensor<T> neg_log1m_mean(const BasicTensor<T>& scores) {
  return scale(mean(log(rsub_scalar(T(1), detail::clamp_scores(scores)))), T(-1));
}

template <class T>
struct AdversarialLosses {
  BasicTensor<T> d;  // -[log D(x,y) + log(1 - D(x,G))]
  BasicTensor<T> g;  // -log D(x,G), or log(1 - D(x,G)) when saturating
};

/// Generator term alone: -log D(x,G), or log(1 - D(x,G)) when saturating.
template <class T>
BasicTensor<T> generator_adversarial_loss(const BasicTensor<T>& d_fake, bool saturating = false) {
  return saturating ? scale(neg_log1m_mean(d_fake), T(-1)) : neg_log_mean(d_fake);
}

/// Scores are per-sample discriminator outputs in (0, 1); results are batch means.
template <class T>
AdversarialLosses<T> adversarial_losses(const BasicTensor<T>& d_real, const BasicTensor<T>& d_fake,
                                        bool saturating = false) {
  AdversarialLosses<T> out;
  out.d = add(neg_log_mean(d_real), neg_log1m_mean(d_fake));
  out.g = generator_adversarial_loss(d_fake, saturating);
  return out;
}

template <class T>
BasicTensor<T> l1_loss(const BasicTensor<T>& output, const BasicTensor<T>& target) {
  if (!(output.shape() == target.shape()))
    throw DimensionError("l1_loss: shape mismatch " + output.shape().str() + " vs " +
                         target.shape().str());
  return mean(abs(sub(output, target)));
}

/// alpha_b * fake + (1 - alpha_b) * real per batch element b. alpha = 0 and
/// alpha = 1 return real and fake values exactly.
template <class T>
BasicTensor<T> perturb_mix(const BasicTensor<T>& fake, const BasicTensor<T>& real,
                           const std::vector<T>& alpha) {
  if (!(fake.shape() == real.shape()))
    throw DimensionError("perturb_mix: shape mismatch " + fake.shape().str() + " vs " +
                         real.shape().str());
  const std::size_t n = fake.dim(0), per = fake.numel() / n;
  if (alpha.size() != n)
    throw ContractError("perturb_mix: need one alpha per batch element");
  for (auto a : alpha)
    if (!(a >= T(0) && a <= T(1))) throw ContractError("perturb_mix: alpha outside [0, 1]");

  std::vector<T> out(fake.numel());
  auto f = fake.data();
  auto r = real.data();
  for (std::size_t b = 0; b < n; ++b) {
    const T a = alpha[b];
    for (std::size_t i = b * per; i < (b + 1) * per; ++i)
      out[i] = a == T(0) ? r[i] : a == T(1) ? f[i] : a * f[i] + (T(1) - a) * r[i];
  }
  auto *pf = fake.node(), *pr = real.node();
  return make_result<T>(fake.shape(), std::move(out), "perturb_mix", {&fake, &real},
                        [pf, pr, alpha, per](detail::Node<T>& self) {
                          auto* gf = grad_sink(pf);
                          auto* gr = grad_sink(pr);
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            const T a = alpha[i / per];
                            if (gf) (*gf)[i] += a * self.grad[i];
                            if (gr) (*gr)[i] += (T(1) - a) * self.grad[i];
                          }
                        });
}

/// Draws one alpha ~ Uniform(0, 1) per batch element.
template <class T>
BasicTensor<T> perturb_mix(const BasicTensor<T>& fake, const BasicTensor<T>& real, Rng& rng) {
  std::vector<T> alpha(fake.dim(0));
  for (auto& a : alpha) a = static_cast<T>(rng.uniform());
  return perturb_mix(fake, real, alpha);
}

/// mean_b -log(1 - D(condition, x_hat)): trains D to flag mixtures as fake.
template <class T>
BasicTensor<T> perturbed_loss(Discriminator<T>& d, const BasicTensor<T>& condition,
                              const BasicTensor<T>& x_hat) {
  return neg_log1m_mean(d.score(condition, x_hat));
}

/// sum_n lambda_n * L1(phi_n(target), phi_n(output)), accumulated in level
/// order. Target features are computed without a graph.
template <class T>
BasicTensor<T> cascade_loss(CascadeNet<T>& phi, const BasicTensor<T>& output,
                            const BasicTensor<T>& target, const std::vector<double>& lambda) {
  if (!(output.shape() == target.shape()))
    throw DimensionError("cascade_loss: shape mismatch " + output.shape().str() + " vs " +
                         target.shape().str());
  std::vector<BasicTensor<T>> target_features;
  {
    NoGradGuard guard;
    target_features = phi.features(target);
  }
  auto output_features = phi.features(output);
  if (lambda.size() != output_features.size())
    throw ContractError("cascade_loss: lambda length differs from level count");
  BasicTensor<T> total;
  for (std::size_t n = 0; n < output_features.size(); ++n) {
    auto term = scale(l1_loss(output_features[n], target_features[n]), static_cast<T>(lambda[n]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Weighted objectives, summed left to right:
///   total_g = (adv_g + gamma * l1) + sigma_c * cascade
///   total_d = adv_d + theta_p * perturbed
/// Undefined optional parts (cascade, perturbed) contribute nothing.
template <class T>
BasicTensor<T> generator_objective(const BasicTensor<T>& adv_g, const BasicTensor<T>& l1,
                                   const BasicTensor<T>& cascade, const LossWeights& w) {
  w.validate();
  auto total = add(adv_g, scale(l1, static_cast<T>(w.gamma)));
  if (cascade.defined()) total = add(total, scale(cascade, static_cast<T>(w.sigma_c)));
  return total;
}

template <class T>
BasicTensor<T> discriminator_objective(const BasicTensor<T>& adv_d, const BasicTensor<T>& perturbed,
                                       const LossWeights& w) {
  w.validate();
  if (!perturbed.defined()) return adv_d;
  return add(adv_d, scale(perturbed, static_cast<T>(w.theta_p)));
}

/// Scalar form of the objectives on already-computed parts, same order as above.
inline LossBundle total_objective(float adv_d, float adv_g, float l1, float perturbed,
                                  float cascade, const LossWeights& w) {
  w.validate();
  LossBundle b{adv_d, adv_g, l1, perturbed, cascade, 0, 0};
  b.total_g = adv_g + static_cast<float>(w.gamma) * l1;
  b.total_g = b.total_g + static_cast<float>(w.sigma_c) * cascade;
  b.total_d = adv_d + static_cast<float>(w.theta_p) * perturbed;
  return b;
}

}  // namespace dgan
