#pragma once

#include "dsf/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace dsf {

/// Reverse-mode tape node. Gradients flow from `grad` into the parents'
/// gradients through `backward`, which is only set while grad mode is on.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Matrix<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix<Scalar>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  Matrix<Scalar>& grad_buffer() {
    if (grad.size() == 0) grad = Matrix<Scalar>::Zero(value.data.rows(), value.data.cols());
    return grad;
  }
};

bool grad_enabled();

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  [[nodiscard]] const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  [[nodiscard]] const Matrix<Scalar>& grad() const { return node_->grad; }
  Matrix<Scalar>& mutable_grad() { return node_->grad; }
  [[nodiscard]] bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

  [[nodiscard]] int channels() const { return node_->value.channels; }
  [[nodiscard]] int height() const { return node_->value.height; }
  [[nodiscard]] int width() const { return node_->value.width; }

  /// Builds a result node. `backward` receives the result node and must push
  /// gradient into the parents; it is dropped when no parent needs gradient.
  static Var make(Tensor<Scalar> value, std::vector<Var> parents, std::function<void(Node<Scalar>&)> backward) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Seeds d(root)/d(root) = 1 (root must be a single element) and propagates
/// through the recorded graph in reverse topological order.
template <typename Scalar>
void backward(const Var<Scalar>& root);

/// Same as above with an explicit seed gradient of the root's shape.
template <typename Scalar>
void backward(const Var<Scalar>& root, const Matrix<Scalar>& seed);

}  // namespace dsf
