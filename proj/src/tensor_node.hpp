#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mlec/tensor.hpp"

namespace mlec {

struct Tensor::Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  // Recorded only when requires_grad is true and the node is not a leaf.
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {

using NodePtr = std::shared_ptr<Tensor::Node>;

/// Builds the output node of an op. The backward rule is attached only when
/// some input requires a gradient; it receives the output node, whose
/// `inputs` are the op's inputs in call order.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward);

inline bool wants_grad(const NodePtr& n) { return n && n->requires_grad; }

}  // namespace detail
}  // namespace mlec
