#pragma once

// Reverse-mode autodiff over dense tensors. A Graph is a tape of nodes created
// in topological order; backward() walks it once in reverse. Leaves either own
// their value or reference an external tensor (parameters), so building a graph
// never copies weight matrices.

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "tdv3/tensor.hpp"

namespace tdv3 {

class Graph;

struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

// Contiguous-with-stride visibility range for one attention query.
struct VisRange {
  int begin = 0;
  int count = 0;
  int stride = 1;
};

class Graph {
 public:
  struct Node {
    Tensor value;                  // owned unless external is set
    const Tensor* external = nullptr;
    Tensor grad;
    bool grad_live = false;        // grad allocated and seeded during backward
    bool needs_grad = false;       // reachable from a trainable leaf
    std::array<int, 3> parents{-1, -1, -1};
    std::function<void(Graph&, int)> backward;
  };

  // ---- leaves ----
  Var input(Tensor t);                         // owned constant
  Var constant(const Tensor& t) { return input(t); }
  Var scalar(double v) { return input(Tensor::scalar(v)); }
  Var param(const Tensor& t, bool trainable = true);  // external reference
  Var stop_grad(Var a) { return input(value(a)); }

  // ---- access ----
  const Tensor& value(Var v) const { return node_value(v.id); }
  const Tensor& grad(Var v) const;
  // Zero tensor when backward never reached this node.
  Tensor grad_or_zero(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.grad_live ? n.grad : Tensor(node_value(v.id).shape);
  }
  int size() const { return static_cast<int>(nodes_.size()); }

  // ---- elementwise ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var silu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var max_scalar(Var a, double c);

  // ---- linear algebra ----
  Var matmul(Var a, Var b);               // [n×k]·[k×m]
  Var linear(Var x, Var w, Var b);        // x·w + b (b broadcast over rows)
  Var add_rowvec(Var x, Var v);

  // ---- shape ----
  Var reshape(Var a, Shape s);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int first, int count);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, int first, int count);
  Var broadcast_row(Var v, int n);        // [m] -> [n×m]

  // ---- reductions ----
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var sum_lastdim(Var a);                 // [n×m] -> [n]

  // ---- row-softmax family ----
  Var softmax_lastdim(Var a);
  Var log_softmax_lastdim(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);

  // Per-row KL(Cat(softmax(p_logits)) || Cat(softmax(q_logits))) -> [rows].
  Var kl_rows(Var p_logits, Var q_logits);

  // Mean binary cross-entropy of logits against fixed probability targets.
  Var bce_logits_mean(Var logits, const Tensor& targets);

  // softmax attention restricted to per-query visibility ranges; scale 1/sqrt(cols).
  Var attention(Var q, Var k, Var v, std::vector<VisRange> vis);

  // Value is the given one-hot sample; gradient passes through to probs unchanged.
  Var st_onehot(Var probs, Tensor sample);

  // Seeds d(root)=1 and accumulates grads into every reachable node that
  // needs them. Root must be scalar.
  void backward(Var root);

 private:
  friend struct Var;
  const Tensor& node_value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  Tensor& grad_slot(int id);
  void accum(int id, const Tensor& g);    // shape-checked add into grad slot
  bool wants(int id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Var make(Tensor value, std::array<int, 3> parents, std::function<void(Graph&, int)> bw);

  std::vector<Node> nodes_;
};

// Arithmetic sugar for same-shape variables.
inline Var operator+(Var a, Var b) { return a.g->add(a, b); }
inline Var operator-(Var a, Var b) { return a.g->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.g->mul(a, b); }

}  // namespace tdv3
