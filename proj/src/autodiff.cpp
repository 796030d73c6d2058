#include "gridpix/autodiff.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace gridpix::ad {

NodePtr constant(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->op = "const";
  n->name = std::move(name);
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

NodePtr param(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->op = "param";
  n->name = std::move(name);
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

NodePtr make_node(std::string op, Tensor value, std::vector<NodePtr> inputs,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in && in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

std::vector<Node*> topo_order(const NodePtr& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> done;
  // iterative post-order DFS; graphs can be deep (chained sums)
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next].get();
      ++next;
      if (child && !done.count(child)) stack.emplace_back(child, 0);
    } else {
      if (done.insert(node).second) order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

Tensor grad_or_zeros(const NodePtr& n) {
  if (same_shape(n->grad, n->value)) return n->grad;
  return Tensor(n->value.shape);
}

double eval_scalar_double(const NodePtr& root,
                          const std::unordered_map<Node*, DoubleBuf>& overrides) {
  if (!root || root->value.numel() != 1)
    throw std::invalid_argument("eval_scalar_double: root must be scalar");
  auto order = topo_order(root);
  std::unordered_map<Node*, DoubleBuf> bufs;
  bufs.reserve(order.size());
  for (Node* n : order) {
    auto ov = overrides.find(n);
    if (ov != overrides.end()) {
      if (ov->second.size() != n->value.numel())
        throw std::invalid_argument("eval_scalar_double: override size mismatch");
      bufs[n] = ov->second;
      continue;
    }
    if (n->inputs.empty() || !n->fwd_double) {
      DoubleBuf b(n->value.numel());
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = n->value.data[i];
      bufs[n] = std::move(b);
      continue;
    }
    std::vector<const DoubleBuf*> in;
    in.reserve(n->inputs.size());
    for (const auto& p : n->inputs) in.push_back(&bufs.at(p.get()));
    bufs[n] = n->fwd_double(in);
  }
  return bufs.at(root.get())[0];
}

void backward(const NodePtr& loss) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (loss->value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss->value.shape));
  auto order = topo_order(loss);
  for (Node* n : order) {
    if (!n->requires_grad) continue;
    n->grad = Tensor(n->value.shape);
  }
  loss->grad.data[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace gridpix::ad
