#pragma once

// Finite-difference checks for every differentiable op, evaluated in double
// precision. Elementwise ops use eps = 1e-3 with inputs kept 0.05 away from
// kinks; composite networks use eps = 1e-6, where a kink crossing is
// negligibly likely.

#include <functional>
#include <string>
#include <vector>

#include "dgan/gradcheck.hpp"
#include "dgan/losses.hpp"
#include "dgan/models.hpp"

namespace dgan {

struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport()> run;
};

namespace detail {

using D = double;
using DT = BasicTensor<double>;

inline DT random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1, double min_abs = 0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) {
    do x = rng.uniform(lo, hi);
    while (std::abs(x) < min_abs);
  }
  return DT(s, std::move(v));
}

inline GradCheckOptions elementwise_opts() { return {}; }

inline GradCheckOptions network_opts(std::size_t max_checks = 0) {
  GradCheckOptions o;
  o.eps = 1e-6;
  o.max_checks_per_input = max_checks;
  o.seed = 5;
  return o;
}

inline std::vector<DT> with_params(std::vector<DT> inputs, const ParamList<D>& params) {
  for (const auto& p : params) inputs.push_back(p.tensor);
  return inputs;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_cases() {
  using detail::DT;
  using detail::random_tensor;
  std::vector<GradCheckCase> cases;
  auto add_case = [&](std::string name, std::function<GradCheckReport()> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  add_case("add", [] {
    Rng r(1);
    auto a = random_tensor({2, 3}, r), b = random_tensor({2, 3}, r), w = random_tensor({2, 3}, r);
    return grad_check<double>([&] { return sum(mul(add(a, b), w)); }, {a, b});
  });
  add_case("sub", [] {
    Rng r(2);
    auto a = random_tensor({2, 3}, r), b = random_tensor({2, 3}, r), w = random_tensor({2, 3}, r);
    return grad_check<double>([&] { return sum(mul(sub(a, b), w)); }, {a, b});
  });
  add_case("mul", [] {
    Rng r(3);
    auto a = random_tensor({2, 3}, r), b = random_tensor({2, 3}, r);
    return grad_check<double>([&] { return sum(mul(a, b)); }, {a, b});
  });
  add_case("scalar_ops", [] {
    Rng r(4);
    auto a = random_tensor({5}, r), w = random_tensor({5}, r);
    return grad_check<double>([&] { return sum(mul(rsub_scalar(2.0, add_scalar(scale(a, 3.0), 0.5)), w)); }, {a});
  });
  add_case("sum_mean", [] {
    Rng r(5);
    auto a = random_tensor({2, 2, 3}, r);
    return grad_check<double>([&] { return add(sum(mul(a, a)), mean(a)); }, {a});
  });
  add_case("sample_mean", [] {
    Rng r(6);
    auto a = random_tensor({2, 1, 2, 2}, r), w = random_tensor({2}, r);
    return grad_check<double>([&] { return sum(mul(sample_mean(a), w)); }, {a});
  });
  add_case("abs", [] {
    Rng r(7);
    auto a = random_tensor({6}, r, -1, 1, 0.05);
    return grad_check<double>([&] { return sum(abs(a)); }, {a});
  });
  add_case("log", [] {
    Rng r(8);
    auto a = random_tensor({6}, r, 0.1, 1.0);
    return grad_check<double>([&] { return sum(log(a)); }, {a});
  });
  add_case("concat_channels", [] {
    Rng r(9);
    auto a = random_tensor({1, 2, 2, 2}, r), b = random_tensor({1, 1, 2, 2}, r), w = random_tensor({1, 3, 2, 2}, r);
    return grad_check<double>([&] { return sum(mul(concat_channels<double>({a, b}), w)); }, {a, b});
  });
  add_case("pad2d", [] {
    Rng r(10);
    auto a = random_tensor({1, 2, 3, 3}, r), w = random_tensor({1, 2, 6, 6}, r);
    return grad_check<double>([&] { return sum(mul(pad2d(a, 1, 2, 1, 2), w)); }, {a});
  });
  add_case("conv2d", [] {
    Rng r(11);
    auto x = random_tensor({2, 3, 6, 6}, r);
    auto p = Conv2dParams<double>::make(3, 4, 4, 2, 1, r, 0.3);
    auto w = random_tensor({2, 4, 3, 3}, r);
    return grad_check<double>([&] { return sum(mul(conv2d(x, p), w)); }, {x, p.weight, p.bias});
  });
  add_case("conv2d_k7", [] {
    Rng r(12);
    auto x = random_tensor({1, 4, 7, 7}, r);
    auto p = Conv2dParams<double>::make(4, 3, 7, 1, 3, r, 0.1);
    auto w = random_tensor({1, 3, 7, 7}, r);
    return grad_check<double>([&] { return sum(mul(conv2d(x, p), w)); }, {x, p.weight, p.bias});
  });
  add_case("conv2d_transpose", [] {
    Rng r(13);
    auto x = random_tensor({2, 4, 3, 3}, r);
    auto p = Conv2dParams<double>::make_transposed(4, 2, 4, 2, 1, r, 0.3);
    auto w = random_tensor({2, 2, 6, 6}, r);
    return grad_check<double>([&] { return sum(mul(conv2d_transpose(x, p), w)); }, {x, p.weight, p.bias});
  });
  add_case("batchnorm_train", [] {
    Rng r(14);
    auto x = random_tensor({2, 3, 3, 3}, r);
    auto bn = BatchNormParams<double>::make(3, r);
    auto w = random_tensor({2, 3, 3, 3}, r);
    return grad_check<double>([&] { return sum(mul(batchnorm(x, bn), w)); }, {x, bn.gamma, bn.beta});
  });
  add_case("batchnorm_eval", [] {
    Rng r(15);
    auto x = random_tensor({2, 3, 3, 3}, r);
    auto bn = BatchNormParams<double>::make(3, r);
    bn.mode = BatchNormMode::kEval;
    auto w = random_tensor({2, 3, 3, 3}, r);
    return grad_check<double>([&] { return sum(mul(batchnorm(x, bn), w)); }, {x, bn.gamma, bn.beta});
  });
  add_case("relu", [] {
    Rng r(16);
    auto x = random_tensor({8}, r, -1, 1, 0.05), w = random_tensor({8}, r);
    return grad_check<double>([&] { return sum(mul(relu(x), w)); }, {x});
  });
  add_case("leaky_relu", [] {
    Rng r(17);
    auto x = random_tensor({8}, r, -1, 1, 0.05), w = random_tensor({8}, r);
    return grad_check<double>([&] { return sum(mul(leaky_relu(x), w)); }, {x});
  });
  add_case("tanh", [] {
    Rng r(18);
    auto x = random_tensor({8}, r), w = random_tensor({8}, r);
    return grad_check<double>([&] { return sum(mul(tanh(x), w)); }, {x});
  });
  add_case("sigmoid", [] {
    Rng r(19);
    auto x = random_tensor({8}, r), w = random_tensor({8}, r);
    return grad_check<double>([&] { return sum(mul(sigmoid(x), w)); }, {x});
  });
  add_case("max_pool2x2", [] {
    Rng r(20);
    auto x = random_tensor({1, 2, 4, 4}, r), w = random_tensor({1, 2, 2, 2}, r);
    return grad_check<double>([&] { return sum(mul(max_pool2x2(x), w)); }, {x});
  });
  add_case("residual_block", [] {
    Rng r(21);
    auto x = random_tensor({1, 4, 6, 6}, r);
    auto p = ResidualBlockParams<double>::make(4, r);
    auto w = random_tensor({1, 4, 6, 6}, r);
    ParamList<double> params;
    p.collect("", params);
    return grad_check<double>([&] { return sum(mul(residual_block(x, p), w)); },
                              detail::with_params({x}, params), detail::network_opts());
  });
  add_case("adversarial_d", [] {
    Rng r(22);
    auto real = random_tensor({3}, r, 0.05, 0.95), fake = random_tensor({3}, r, 0.05, 0.95);
    return grad_check<double>([&] { return adversarial_losses(real, fake).d; }, {real, fake});
  });
  add_case("adversarial_g", [] {
    Rng r(23);
    auto fake = random_tensor({3}, r, 0.05, 0.95);
    return grad_check<double>([&] { return generator_adversarial_loss(fake); }, {fake});
  });
  add_case("l1", [] {
    Rng r(24);
    auto a = random_tensor({1, 3, 4, 4}, r), b = random_tensor({1, 3, 4, 4}, r);
    // keep every residual at least 0.05 away from the kink
    auto av = a.mutable_data();
    auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i)
      if (std::abs(av[i] - bv[i]) < 0.05) av[i] = bv[i] + (av[i] >= bv[i] ? 0.05 : -0.05);
    return grad_check<double>([&] { return l1_loss(a, b); }, {a, b});
  });
  add_case("perturbed", [] {
    Rng r(25);
    DiscriminatorConfig dc;
    dc.condition_channels = 2;
    dc.layers = 2;
    dc.base_width = 4;
    Discriminator<double> d(dc, r);
    auto cond = random_tensor({2, 2, 8, 8}, r), fake = random_tensor({2, 3, 8, 8}, r),
         real = random_tensor({2, 3, 8, 8}, r);
    const std::vector<double> alpha{0.3, 0.8};
    return grad_check<double>([&] { return perturbed_loss(d, cond, perturb_mix(fake, real, alpha)); },
                              detail::with_params({fake, real, cond}, d.parameters()), detail::network_opts());
  });
  add_case("cascade", [] {
    Rng r(26);
    CascadeNetConfig cc;
    cc.widths = {4, 4, 6, 6, 8};
    CascadeNet<double> phi(cc);
    auto out = random_tensor({1, 3, 8, 8}, r), target = random_tensor({1, 3, 8, 8}, r);
    const std::vector<double> lambda(5, 0.2);
    return grad_check<double>([&] { return cascade_loss(phi, out, target, lambda); }, {out}, detail::network_opts());
  });
  add_case("generator", [] {
    Rng r(27);
    GeneratorConfig gc;
    gc.input_channels = 5;
    gc.base_width = 4;
    gc.num_res_blocks = 2;
    gc.image_size = 8;
    Generator<double> g(gc, r);
    auto x = random_tensor({1, 5, 8, 8}, r), w = random_tensor({1, 3, 8, 8}, r);
    return grad_check<double>([&] { return sum(mul(g.forward(x), w)); }, detail::with_params({x}, g.parameters()),
                              detail::network_opts(24));
  });
  add_case("discriminator", [] {
    Rng r(28);
    DiscriminatorConfig dc;
    dc.condition_channels = 5;
    dc.layers = 2;
    dc.base_width = 4;
    Discriminator<double> d(dc, r);
    auto cond = random_tensor({1, 5, 8, 8}, r), img = random_tensor({1, 3, 8, 8}, r);
    auto w = random_tensor({1, 1, 2, 2}, r);
    return grad_check<double>([&] { return sum(mul(d.forward(cond, img), w)); },
                              detail::with_params({cond, img}, d.parameters()), detail::network_opts(24));
  });
  return cases;
}

}  // namespace dgan
