#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "vrn/mesh.hpp"

namespace vrn::nn {

struct ShapeError : Error { using Error::Error; };
struct NonFiniteError : Error { using Error::Error; };

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, [](std::size_t a, int b) { return a * std::size_t(b); });
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Graph recording is on by default; a NoGradGuard disables it on this thread.
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Shared handle to a node of the computation graph. Copies alias the same
// storage; use clone() for a deep copy of the values.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != data.size()) throw ShapeError("data length does not match shape " + to_string(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor parameter(Shape shape, T fill = T(0)) {
    Tensor t(std::move(shape), fill);
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  Tensor clone() const { return Tensor(shape(), data()); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Result of an op: records parents and the backward closure only when
  // recording is on and some parent needs a gradient.
  static Tensor from_op(Shape shape, std::vector<T> data, std::vector<std::shared_ptr<Node<T>>> parents,
                        std::function<void(Node<T>&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs && grad_enabled()) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar. Gradients accumulate into every node that
// requires one; leaf gradients persist until zeroed.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar");
  if (!loss.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
  // Free intermediate gradients; leaves keep theirs.
  for (Node<T>* n : order)
    if (n->backward) std::vector<T>().swap(n->grad);
}

}  // namespace vrn::nn
