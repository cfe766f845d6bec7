#include "derm/autodiff/graph.hpp"

namespace derm::ad {

template <typename Scalar>
const typename Graph<Scalar>::Node& Graph<Scalar>::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

template <typename Scalar>
typename Graph<Scalar>::Node& Graph<Scalar>::node(Var v) {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

template <typename Scalar>
Var Graph<Scalar>::constant(TensorT value) {
  if (!value.all_finite()) throw NumericError("non-finite value in constant input");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Scalar>
Var Graph<Scalar>::param(std::string name, TensorT value) {
  if (name.empty()) throw ParameterError("parameter name must be non-empty");
  if (!value.all_finite()) throw NumericError("non-finite value in parameter '" + name + "'");
  Node n;
  n.op = "param";
  n.value = std::move(value);
  n.requires_grad = true;
  n.param_name = std::move(name);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Scalar>
Var Graph<Scalar>::record(std::string_view op, TensorT value, std::vector<Var> inputs,
                          BackwardFn<Scalar> backward) {
  if (!value.all_finite())
    throw NumericError("non-finite value in output of " + std::string(op));
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) throw ContractError("input of " + n.op + " is not in the graph");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Scalar>
const typename Graph<Scalar>::TensorT* Graph<Scalar>::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

template <typename Scalar>
typename Graph<Scalar>::TensorT& Graph<Scalar>::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = TensorT::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Scalar>
void Graph<Scalar>::accumulate(Var v, const TensorT& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                         shape_str(n.value.shape()) + " at " + n.op);
  grad_buffer(v).data() += g.data();
}

template <typename Scalar>
GradMap<Scalar> Graph<Scalar>::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));

  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = TensorT();
  }
  GradMap<Scalar> grads;
  if (!root.requires_grad) return grads;

  grad_buffer(loss).data().setOnes();
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }

  for (const Node& n : nodes_) {
    if (n.param_name.empty() || !n.has_grad) continue;
    auto [it, inserted] = grads.try_emplace(n.param_name, n.grad);
    if (!inserted) it->second.data() += n.grad.data();
  }
  return grads;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace derm::ad
