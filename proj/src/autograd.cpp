#include "dsf/autograd.hpp"

#include <unordered_set>

namespace dsf {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
void backward(const Var<Scalar>& root, const Matrix<Scalar>& seed) {
  using NodePtr = Node<Scalar>*;
  if (!root.requires_grad()) return;

  // Iterative DFS post-order; shared subgraphs are visited once.
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++].get();
      if (parent->requires_grad && !parent->parents.empty() && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
    // Interior gradients are no longer needed once propagated.
    if (node != root.node().get()) node->grad.resize(0, 0);
  }
}

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  backward(root, Matrix<Scalar>::Ones(1, 1).eval());
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template void backward<float>(const Var<float>&, const Matrix<float>&);
template void backward<double>(const Var<double>&, const Matrix<double>&);

}  // namespace dsf
