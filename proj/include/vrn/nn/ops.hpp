#pragma once

#include <cmath>

#include <Eigen/Core>

#include "vrn/nn/tensor.hpp"

namespace vrn::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int c, h, w, k, stride, pad, ho, wo;
  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// cols[(ci*k + ky)*k + kx][oy*wo + ox] = x[ci][oy*stride + ky - pad][ox*stride + kx - pad]
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int hw = g.ho * g.wo;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + std::size_t((ci * g.k + ky) * g.k + kx) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (std::size_t(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const int hw = g.ho * g.wo;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + std::size_t((ci * g.k + ky) * g.k + kx) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = dx + (std::size_t(ci) * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// Cross-correlation. x: [N,C,H,W], weight: [O,C,k,k], bias: [O] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1, int pad = 0) {
  using namespace detail;
  require(x.shape().size() == 4 && weight.shape().size() == 4, "conv2d expects 4D input and weight");
  require(weight.dim(2) == weight.dim(3), "conv2d expects square kernels");
  require(x.dim(1) == weight.dim(1), "conv2d channel mismatch: input " + to_string(x.shape()) + " vs weight " +
                                         to_string(weight.shape()));
  require(stride >= 1 && pad >= 0, "conv2d stride must be >= 1 and pad >= 0");
  const int n = x.dim(0), o = weight.dim(0);
  ConvGeom g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d output would be empty");
  if (bias.defined()) require(bias.size() == std::size_t(o), "conv2d bias length mismatch");

  const int kdim = g.c * g.k * g.k, hw = g.ho * g.wo;
  const std::size_t in_per = std::size_t(g.c) * g.h * g.w, out_per = std::size_t(o) * hw;
  std::vector<T> out(std::size_t(n) * out_per);
  auto cols = std::make_shared<std::vector<T>>();
  if (!g.is_pointwise()) cols->resize(std::size_t(n) * kdim * hw);

  ConstMatMap<T> wm(weight.data().data(), o, kdim);
  for (int b = 0; b < n; ++b) {
    const T* xb = x.data().data() + b * in_per;
    const T* colb = xb;
    if (!g.is_pointwise()) {
      im2col(xb, g, cols->data() + std::size_t(b) * kdim * hw);
      colb = cols->data() + std::size_t(b) * kdim * hw;
    }
    MatMap<T> om(out.data() + b * out_per, o, hw);
    om.noalias() = wm * ConstMatMap<T>(colb, kdim, hw);
    if (bias.defined())
      for (int oc = 0; oc < o; ++oc) om.row(oc).array() += bias.data()[oc];
  }

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  const bool has_bias = bias.defined();
  return Tensor<T>::from_op(
      {n, o, g.ho, g.wo}, std::move(out), std::move(parents),
      [g, n, o, kdim, hw, in_per, out_per, cols, has_bias](Node<T>& self) {
        Node<T>& xn = *self.parents[0];
        Node<T>& wn = *self.parents[1];
        ConstMatMap<T> wm(wn.data.data(), o, kdim);
        std::vector<T> dcols;
        for (int b = 0; b < n; ++b) {
          ConstMatMap<T> dout(self.grad.data() + b * out_per, o, hw);
          const T* colb = g.is_pointwise() ? xn.data.data() + b * in_per : cols->data() + std::size_t(b) * kdim * hw;
          if (wn.requires_grad) MatMap<T>(wn.ensure_grad().data(), o, kdim).noalias() += dout * ConstMatMap<T>(colb, kdim, hw).transpose();
          if (has_bias && self.parents[2]->requires_grad) {
            auto& bg = self.parents[2]->ensure_grad();
            for (int oc = 0; oc < o; ++oc) bg[oc] += dout.row(oc).sum();
          }
          if (xn.requires_grad) {
            T* dx = xn.ensure_grad().data() + b * in_per;
            if (g.is_pointwise()) {
              MatMap<T>(dx, kdim, hw).noalias() += wm.transpose() * dout;
            } else {
              dcols.resize(std::size_t(kdim) * hw);
              MatMap<T>(dcols.data(), kdim, hw).noalias() = wm.transpose() * dout;
              col2im(dcols.data(), g, dx);
            }
          }
        }
      });
}

// While set on this thread, relu folds the sign pattern of its inputs into
// the pointed-to hash, so a finite-difference check can tell when a step
// moved some unit across its kink.
inline std::uint64_t*& relu_sign_hash() {
  thread_local std::uint64_t* h = nullptr;
  return h;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data());
  if (std::uint64_t* h = relu_sign_hash()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      word = (word << 1) | (out[i] > T(0));
      if (i % 64 == 63 || i + 1 == out.size()) {
        *h = (*h ^ word) * 0x100000001B3ull;
        word = 0;
      }
    }
  }
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& dx = xn.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xn.data[i] > T(0)) dx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& d = p->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

// 2x2 average pooling with stride 2; H and W must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require(x.shape().size() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
                  "avg_pool2 needs even spatial size, got " + to_string(x.shape()));
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / 2, wo = w / 2;
  std::vector<T> out(std::size_t(nc) * ho * wo);
  const T* in = x.data().data();
  for (int c = 0; c < nc; ++c)
    for (int y = 0; y < ho; ++y)
      for (int z = 0; z < wo; ++z) {
        const T* p = in + (std::size_t(c) * h + 2 * y) * w + 2 * z;
        out[(std::size_t(c) * ho + y) * wo + z] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  return Tensor<T>::from_op({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x.node()}, [nc, h, w, ho, wo](Node<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (int c = 0; c < nc; ++c)
      for (int y = 0; y < ho; ++y)
        for (int z = 0; z < wo; ++z) {
          const T g = T(0.25) * self.grad[(std::size_t(c) * ho + y) * wo + z];
          T* p = dx.data() + (std::size_t(c) * h + 2 * y) * w + 2 * z;
          p[0] += g;
          p[1] += g;
          p[w] += g;
          p[w + 1] += g;
        }
  });
}

// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  detail::require(x.shape().size() == 4, "upsample2 expects 4D input");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = 2 * h, wo = 2 * w;
  std::vector<T> out(std::size_t(nc) * ho * wo);
  const T* in = x.data().data();
  for (int c = 0; c < nc; ++c)
    for (int y = 0; y < ho; ++y)
      for (int z = 0; z < wo; ++z) out[(std::size_t(c) * ho + y) * wo + z] = in[(std::size_t(c) * h + y / 2) * w + z / 2];
  return Tensor<T>::from_op({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x.node()}, [nc, h, w, ho, wo](Node<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (int c = 0; c < nc; ++c)
      for (int y = 0; y < ho; ++y)
        for (int z = 0; z < wo; ++z) dx[(std::size_t(c) * h + y / 2) * w + z / 2] += self.grad[(std::size_t(c) * ho + y) * wo + z];
  });
}

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// -sum[v log s(z) + (1-v) log(1 - s(z))], evaluated as
// max(z,0) - z v + log(1 + exp(-|z|)). d/dz = s(z) - v.
template <typename T>
Tensor<T> sigmoid_ce_loss(const Tensor<T>& logits, const std::vector<T>& target) {
  detail::require(logits.size() == target.size(), "sigmoid_ce_loss: " + std::to_string(logits.size()) +
                                                      " logits vs " + std::to_string(target.size()) + " targets");
  const auto& z = logits.data();
  // Accumulated in long double so the all-zero case yields N*ln2 to the last bit.
  long double acc = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    acc += static_cast<long double>(std::max(z[i], T(0)) - z[i] * target[i] + std::log1p(std::exp(-std::abs(z[i]))));
  auto tgt = std::make_shared<std::vector<T>>(target);
  return Tensor<T>::from_op({1}, {static_cast<T>(acc)}, {logits.node()}, [tgt](Node<T>& self) {
    Node<T>& zn = *self.parents[0];
    auto& dz = zn.ensure_grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += g * (sigmoid(zn.data[i]) - (*tgt)[i]);
  });
}

// sum (x - target)^2
template <typename T>
Tensor<T> squared_error_loss(const Tensor<T>& x, const std::vector<T>& target) {
  detail::require(x.size() == target.size(), "squared_error_loss size mismatch");
  long double acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const long double d = static_cast<long double>(x.data()[i]) - target[i];
    acc += d * d;
  }
  auto tgt = std::make_shared<std::vector<T>>(target);
  return Tensor<T>::from_op({1}, {static_cast<T>(acc)}, {x.node()}, [tgt](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& dx = xn.ensure_grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * T(2) * (xn.data[i] - (*tgt)[i]);
  });
}

// sum_i x_i * r_i: projects a tensor to a scalar for gradient checks.
template <typename T>
Tensor<T> dot(const Tensor<T>& x, const std::vector<T>& r) {
  detail::require(x.size() == r.size(), "dot size mismatch");
  long double acc = 0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += static_cast<long double>(x.data()[i]) * r[i];
  auto rr = std::make_shared<std::vector<T>>(r);
  return Tensor<T>::from_op({1}, {static_cast<T>(acc)}, {x.node()}, [rr](Node<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[0] * (*rr)[i];
  });
}

template <typename T>
Tensor<T> add_scalars(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.size() == 1 && b.size() == 1, "add_scalars expects scalars");
  return add(a, b);
}

}  // namespace vrn::nn
