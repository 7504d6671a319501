#pragma once

#include "vrn/nn/layers.hpp"

namespace vrn::nn {

// Piecewise-constant learning rate: `initial` for epochs 1..boundary
// (1-indexed), `decayed` afterwards.
struct LrSchedule {
  double initial = 1e-4;
  double decayed = 1e-5;
  int boundary = 40;

  double at(int epoch) const { return epoch <= boundary ? initial : decayed; }
};

// v <- a v + (1 - a) g^2 ;  p <- p - lr g / (sqrt(v) + eps)
template <typename T>
class RmsProp {
 public:
  explicit RmsProp(ParamSet<T>& params, double decay = 0.99, double eps = 1e-8)
      : params_(&params), decay_(decay), eps_(eps) {
    for (const auto& [_, t] : params) state_.emplace_back(t.size(), 0.0);
  }

  // Throws NonFiniteError before touching any parameter if a gradient is NaN/inf.
  void step(double lr) {
    std::size_t i = 0;
    for (auto& [name, t] : *params_) {
      if (!t.has_grad()) continue;
      for (T g : t.grad())
        if (!std::isfinite(static_cast<double>(g))) throw NonFiniteError("non-finite gradient in '" + name + "'");
    }
    for (auto& [_, t] : *params_) {
      auto& v = state_[i++];
      auto& p = t.data();
      const bool has = t.has_grad();
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = has ? static_cast<double>(t.grad()[k]) : 0.0;
        v[k] = decay_ * v[k] + (1.0 - decay_) * g * g;
        p[k] = static_cast<T>(p[k] - lr * g / (std::sqrt(v[k]) + eps_));
      }
    }
    ++steps_;
  }

  const std::vector<std::vector<double>>& state() const { return state_; }
  long steps() const { return steps_; }

 private:
  ParamSet<T>* params_;
  double decay_, eps_;
  std::vector<std::vector<double>> state_;
  long steps_ = 0;
};

}  // namespace vrn::nn
