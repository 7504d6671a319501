#pragma once

#include <functional>
#include <random>

#include "vrn/nn/ops.hpp"

namespace vrn::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]" of the worst entry
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t retried = 0;  // entries whose first step crossed a ReLU kink
  std::size_t kinked = 0;   // entries left unchecked: every step crossed a kink
  std::size_t checked = 0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

struct GradCheckOptions {
  std::size_t samples_per_tensor = 20;  // 0 checks every entry
  double step = 1e-6;
  // Entries whose analytic and numeric gradients are both below this are
  // compared absolutely; avoids dividing round-off by ~0.
  double floor = 1e-7;
  std::uint64_t seed = 1;
  // When the +step and -step evaluations see different ReLU sign patterns
  // the difference straddles a kink; retry with the step divided by 10.
  int kink_retries = 2;
};

// Central differences on a random subset of entries of each tensor, compared
// against the gradient from one backward() of `loss`.
inline GradCheckReport gradient_check(const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                                      const std::function<Tensor<double>()>& loss, GradCheckOptions opts = {}) {
  for (auto [_, t] : inputs) t.zero_grad();
  {
    Tensor<double> l = loss();
    backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (auto [_, t] : inputs) analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));

  NoGradGuard ng;
  std::mt19937_64 rng(opts.seed);
  GradCheckReport rep;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double> t = inputs[ti].second;
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.samples_per_tensor && opts.samples_per_tensor < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.samples_per_tensor);
    }
    for (std::size_t k : idx) {
      const double orig = t.data()[k];
      auto eval = [&](double v, std::uint64_t& sig) {
        t.data()[k] = v;
        sig = 0xCBF29CE484222325ull;
        struct Watch {
          explicit Watch(std::uint64_t* h) { relu_sign_hash() = h; }
          ~Watch() { relu_sign_hash() = nullptr; }
        } watch(&sig);
        return loss().item();
      };
      double step = opts.step, lp = 0, lm = 0;
      bool clean = false;
      for (int attempt = 0; attempt <= opts.kink_retries && !clean; ++attempt) {
        if (attempt) {
          step /= 10;
          if (attempt == 1) ++rep.retried;
        }
        std::uint64_t sp = 0, sm = 0;
        lp = eval(orig + step, sp);
        lm = eval(orig - step, sm);
        clean = sp == sm;
      }
      t.data()[k] = orig;
      if (!clean) {
        ++rep.kinked;
        continue;
      }
      const double num = (lp - lm) / (2 * step);
      const double ana = analytic[ti][k];
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), opts.floor});
      ++rep.checked;
      if (rel > rep.max_rel_error || rep.worst.empty()) {
        rep.max_rel_error = rel;
        rep.worst = inputs[ti].first + "[" + std::to_string(k) + "]";
        rep.worst_analytic = ana;
        rep.worst_numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace vrn::nn
