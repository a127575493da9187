#pragma once

#include <functional>
#include <span>
#include <vector>

#include "evowarn/tensor.hpp"

namespace evowarn {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense tensors. Nodes are recorded in topological
// order (parents always precede children); backward walks them in reverse,
// accumulating gradients additively. A tape is single-threaded and is meant
// to live for one forward/backward pass.
//
// To bound memory, backward releases the value and gradient storage of
// interior nodes once they have been processed; after backward, gradients
// remain available for leaves only.
class Tape {
 public:
  struct BackwardContext {
    const Tensor& value;  // this node's forward value
    const Tensor& grad;   // this node's accumulated output gradient
    std::span<const Tensor* const> parent_values;
    std::span<Tensor* const> parent_grads;  // accumulate with +=
  };
  using BackwardFn = std::function<void(const BackwardContext&)>;

  Var leaf(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target w.r.t. a leaf. Zero tensor if the
  // leaf was never reached. Throws for interior nodes (storage is released).
  Tensor grad(Var v) const;

  // Elementwise ops (shapes must match for the binary ones).
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var sigmoid(Var a);
  Var tanh(Var a);

  // Numerically stable softmax along `axis` (negative counts from the back).
  Var softmax(Var a, int axis = -1);

  Var matmul(Var a, Var b);  // (m x k)(k x p) -> (m x p)
  Var scale(Var a, double c);
  Var add_bias(Var a, Var bias);  // bias over the last axis, broadcast over leading axes
  Var transpose(Var a);           // 2-D
  Var reshape(Var a, std::vector<int> shape);
  Var concat_last(std::span<const Var> parts);     // rank-1 or rank-2, along last axis
  Var slice_time(Var seq, int t);                  // (b,T,F) -> (b,F)
  Var stack_time(std::span<const Var> steps);      // T x (b,F) -> (b,T,F)
  Var slice_rows(Var a, int begin, int count);     // 2-D row range
  Var bmm(Var a, Var b);                           // (b,m,k)(b,k,p) -> (b,m,p)
  Var transpose_last2(Var a);                      // (b,m,k) -> (b,k,m)
  Var mean_time(Var seq);                          // (b,T,F) -> (b,F)
  Var sum_all(Var a);                              // -> scalar

  // Escape hatch for layer ops with bespoke backward rules.
  Var custom(std::vector<Var> parents, Tensor value, BackwardFn fn);

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every ancestor.
  // loss must be scalar (size 1).
  void backward(Var loss);

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool is_leaf = false;
  };

  Node& at(Var v);
  const Node& at(Var v) const;
  Var push(Tensor value, std::vector<int> parents, BackwardFn fn, bool leaf = false);

  std::vector<Node> nodes_;
};

// Max relative error between tape gradients and central finite differences
// of f, perturbing every coordinate of every input. f must be a pure
// function building a scalar output from the given leaves.
double check_gradients_multi(
    const std::function<Var(Tape&, std::span<const Var>)>& f,
    std::span<const Tensor> inputs, double eps = 1e-5);

// Single-input convenience wrapper.
double check_gradients(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                       double eps = 1e-5);

}  // namespace evowarn
