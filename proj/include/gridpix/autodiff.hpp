#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridpix/tensor.hpp"

namespace gridpix::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using DoubleBuf = std::vector<double>;

// One vertex of the (acyclic, eagerly evaluated) computation graph.
// backward_fn reads this node's grad and accumulates into the inputs' grads.
// fwd_double re-evaluates the op in float64 from its inputs' double buffers;
// the finite-difference harness uses it so FD quotients are not limited by
// float32 rounding. Leaves have no fwd_double.
struct Node {
  std::string op;
  std::string name;  // set for parameters
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;
  std::function<DoubleBuf(const std::vector<const DoubleBuf*>&)> fwd_double;
};

NodePtr constant(Tensor value, std::string name = "");
NodePtr param(Tensor value, std::string name);

// Internal helper for op builders: requires_grad is inherited from inputs.
NodePtr make_node(std::string op, Tensor value, std::vector<NodePtr> inputs,
                  std::function<void(Node&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Grads of all nodes reachable from
// the loss (that require grad) are zeroed, the loss seeds with 1, and
// backward functions run in reverse topological order.
void backward(const NodePtr& loss);

// Topological order (inputs before consumers) of the subgraph under root.
std::vector<Node*> topo_order(const NodePtr& root);

// The node's gradient, or zeros when the node was not reached by backward.
Tensor grad_or_zeros(const NodePtr& n);

// Walks the graph in topological order evaluating every op in float64.
// Leaves take their float32 values (exact), except entries in `overrides`
// which substitute the full buffer. The root must be scalar.
double eval_scalar_double(const NodePtr& root,
                          const std::unordered_map<Node*, DoubleBuf>& overrides);

}  // namespace gridpix::ad
