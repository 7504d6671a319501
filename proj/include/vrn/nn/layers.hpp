#pragma once

#include <random>

#include "vrn/nn/ops.hpp"

namespace vrn::nn {

// Named, ordered collection of trainable tensors. Registration order is the
// checkpoint and optimizer order.
template <typename T>
class ParamSet {
 public:
  Tensor<T> create(const std::string& name, Shape shape) {
    for (const auto& [n, _] : params_)
      if (n == name) throw Error("duplicate parameter name '" + name + "'");
    auto t = Tensor<T>::parameter(std::move(shape));
    params_.emplace_back(name, t);
    return t;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  const std::pair<std::string, Tensor<T>>& operator[](std::size_t i) const { return params_[i]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

// He-normal weights scaled by `gain`, zero bias.
template <typename T>
struct Conv {
  Tensor<T> weight, bias;
  int stride = 1, pad = 0;

  Conv() = default;
  Conv(ParamSet<T>& ps, const std::string& name, int in, int out, int k, int stride_ = 1) : stride(stride_), pad(k / 2) {
    if (in < 1 || out < 1 || k < 1 || stride_ < 1) throw ShapeError("invalid conv spec for '" + name + "'");
    weight = ps.create(name + ".weight", {out, in, k, k});
    bias = ps.create(name + ".bias", {out});
  }

  void init(std::mt19937_64& rng, double gain = 1.0) {
    const double fan_in = double(weight.dim(1)) * weight.dim(2) * weight.dim(3);
    std::normal_distribution<double> n(0.0, gain * std::sqrt(2.0 / fan_in));
    for (auto& w : weight.data()) w = static_cast<T>(n(rng));
    std::fill(bias.data().begin(), bias.data().end(), T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight.dim(0); }
};

// y = skip(x) + F(x), F = 1x1 -> ReLU -> 3x3 -> ReLU -> 1x1 applied to ReLU(x)
// with a bottleneck of half the output width. skip is the identity when the
// widths agree and a 1x1 projection otherwise.
template <typename T>
struct Residual {
  Conv<T> reduce, spatial, expand, project;
  bool has_projection = false;

  Residual() = default;
  Residual(ParamSet<T>& ps, const std::string& name, int in, int out) {
    const int mid = std::max(1, out / 2);
    reduce = Conv<T>(ps, name + ".reduce", in, mid, 1);
    spatial = Conv<T>(ps, name + ".spatial", mid, mid, 3);
    expand = Conv<T>(ps, name + ".expand", mid, out, 1);
    has_projection = in != out;
    if (has_projection) project = Conv<T>(ps, name + ".project", in, out, 1);
  }

  void init(std::mt19937_64& rng, double branch_gain) {
    reduce.init(rng);
    spatial.init(rng);
    expand.init(rng, branch_gain);
    if (has_projection) project.init(rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> f = expand(relu(spatial(relu(reduce(relu(x))))));
    return add(has_projection ? project(x) : x, f);
  }
};

// Symmetric encoder/decoder: at each level the input is kept at full
// resolution through a residual skip and, in parallel, pooled, processed
// one level deeper and upsampled back before the two are summed.
template <typename T>
class Hourglass {
 public:
  Hourglass() = default;
  Hourglass(ParamSet<T>& ps, const std::string& name, int depth, int features, bool skips = true)
      : depth_(depth), skips_(skips) {
    if (depth < 1) throw ShapeError("hourglass depth must be >= 1");
    skip_ = Residual<T>(ps, name + ".skip", features, features);
    down_ = Residual<T>(ps, name + ".down", features, features);
    if (depth > 1)
      inner_ = std::make_unique<Hourglass>(ps, name + ".inner", depth - 1, features, skips);
    else
      bottom_ = Residual<T>(ps, name + ".bottom", features, features);
    up_ = Residual<T>(ps, name + ".up", features, features);
  }

  void init(std::mt19937_64& rng, double branch_gain) {
    skip_.init(rng, branch_gain);
    down_.init(rng, branch_gain);
    if (inner_)
      inner_->init(rng, branch_gain);
    else
      bottom_.init(rng, branch_gain);
    up_.init(rng, branch_gain);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const int f = 1 << depth_;
    if (x.dim(2) % f != 0 || x.dim(3) % f != 0)
      throw ShapeError("hourglass of depth " + std::to_string(depth_) + " needs spatial size divisible by " +
                       std::to_string(f) + ", got " + to_string(x.shape()));
    Tensor<T> low = down_(avg_pool2(x));
    low = inner_ ? (*inner_)(low) : bottom_(low);
    low = upsample2(up_(low));
    return skips_ ? add(skip_(x), low) : low;
  }

  int depth() const { return depth_; }

 private:
  int depth_ = 1;
  bool skips_ = true;
  Residual<T> skip_, down_, bottom_, up_;
  std::unique_ptr<Hourglass> inner_;
};

}  // namespace vrn::nn
