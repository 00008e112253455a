#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-3;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
  // 0 checks every element; otherwise a seeded random subset per input.
  std::size_t max_checks_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool ok = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string message;
};

/// Name of the earliest recorded op whose output holds a NaN or Inf:
/// walks the graph from `t` towards the leaves.
template <class T>
std::string nonfinite_origin(const BasicTensor<T>& t) {
  auto finite = [](const detail::Node<T>& n) {
    for (auto v : n.data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  };
  const detail::Node<T>* node = t.node();
  while (node) {
    const detail::Node<T>* next = nullptr;
    for (const auto& p : node->parents)
      if (p && !finite(*p)) {
        next = p.get();
        break;
      }
    if (!next) return node->op;
    node = next;
  }
  return "unknown";
}

/// Compares reverse-mode gradients of the scalar `f` with respect to each
/// tensor in `inputs` against central differences (f(x+e) - f(x-e)) / 2e.
/// `f` must read the inputs by reference so in-place perturbation is seen.
template <class T>
GradCheckReport grad_check(const std::function<BasicTensor<T>()>& f,
                           std::vector<BasicTensor<T>> inputs, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }

  auto loss = f();
  if (loss.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    report.ok = false;
    report.message = "non-finite value produced by op '" + nonfinite_origin(loss) + "'";
    return report;
  }
  backward(loss);

  Rng rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    std::vector<T> analytic(x.numel(), T(0));
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> indices;
    if (opt.max_checks_per_input == 0 || opt.max_checks_per_input >= x.numel()) {
      indices.resize(x.numel());
      for (std::size_t i = 0; i < x.numel(); ++i) indices[i] = i;
    } else {
      for (std::size_t i = 0; i < opt.max_checks_per_input; ++i) indices.push_back(rng.below(x.numel()));
    }

    auto values = x.mutable_data();
    for (auto i : indices) {
      const T saved = values[i];
      double fp, fm;
      {
        NoGradGuard guard;
        values[i] = static_cast<T>(saved + opt.eps);
        auto up = f();
        values[i] = static_cast<T>(saved - opt.eps);
        auto down = f();
        fp = static_cast<double>(up.item());
        fm = static_cast<double>(down.item());
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
          values[i] = static_cast<T>(std::isfinite(fp) ? saved - opt.eps : saved + opt.eps);
          std::string origin;
          {
            GradModeGuard enable(true);
            origin = nonfinite_origin(f());
          }
          values[i] = saved;
          report.ok = false;
          report.message = "non-finite value produced by op '" + origin + "'";
          return report;
        }
      }
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.ok = report.max_rel_error < opt.tol;
  if (!report.ok)
    report.message = "input " + std::to_string(report.worst_input) + "[" +
                     std::to_string(report.worst_index) + "]: analytic " +
                     std::to_string(report.worst_analytic) + " vs numeric " +
                     std::to_string(report.worst_numeric);
  return report;
}

}  // namespace dgan
