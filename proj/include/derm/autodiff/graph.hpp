#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "derm/autodiff/tensor.hpp"

namespace derm::ad {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Parameter gradients keyed by parameter name.
template <typename Scalar>
using GradMap = std::map<std::string, Tensor<Scalar>>;

/// Named trainable tensors. Ordered so that iteration (and hence every
/// optimizer update and checkpoint) is deterministic.
template <typename Scalar>
using ParamSet = std::map<std::string, Tensor<Scalar>>;

template <typename Scalar>
class Graph;

/// Backward rule of one node: reads the node's output gradient and
/// accumulates into its inputs through Graph::accumulate.
template <typename Scalar>
using BackwardFn = std::function<void(Graph<Scalar>&, const Tensor<Scalar>& out_grad)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so insertion
/// order is a topological order and backward walks it in reverse.
///
/// A graph is a single-threaded unit of work. backward() does not consume
/// the tape; it may be called repeatedly (for different losses) and each call
/// starts from fresh gradient buffers.
template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;

  Var constant(TensorT value);
  Var param(std::string name, TensorT value);

  /// Appends an operation node. `backward` may be empty when no input
  /// requires a gradient.
  Var record(std::string_view op, TensorT value, std::vector<Var> inputs, BackwardFn<Scalar> backward);

  const TensorT& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::string_view op(Var v) const { return node(v).op; }
  const std::vector<Var>& inputs(Var v) const { return node(v).inputs; }

  /// Gradient buffer of `v` from the most recent backward(), or nullptr when
  /// no gradient reached it.
  const TensorT* grad(Var v) const;

  /// Adds `g` into the gradient buffer of `v` (allocated on first use). A
  /// no-op for nodes that do not require a gradient.
  void accumulate(Var v, const TensorT& g);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& g);

  /// Reverse pass from a scalar loss. Returns gradients of every parameter
  /// the loss depends on; parameters recorded under the same name sum.
  GradMap<Scalar> backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    TensorT value;
    std::vector<Var> inputs;
    BackwardFn<Scalar> backward;
    bool requires_grad = false;
    std::string param_name;  // non-empty for parameter leaves
    TensorT grad;
    bool has_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  TensorT& grad_buffer(Var v);

  std::vector<Node> nodes_;
};

template <typename Scalar>
template <typename Expr>
void Graph<Scalar>::accumulate_expr(Var v, const Expr& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  grad_buffer(v).data() += g;
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace derm::ad
