#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni::numerics {

class Tape;

// Handle to a node on a Tape. Cheap to copy; owns nothing.
struct Var {
  int id = -1;
  Tape* tape = nullptr;
};

// Reverse-mode tape. Operations append nodes in evaluation order, so a
// single backward pass in reverse creation order visits each node exactly
// once in reverse topological order. One tape per forward pass; tapes are
// confined to the thread that builds them.
class Tape {
 public:
  Var leaf(Tensor value);      // differentiable input (parameter)
  Var constant(Tensor value);  // data; gradient flow stops here

  const Tensor& value(Var v) const;
  // Valid after backward(); zero for leaves not on any path to the loss.
  const Tensor& grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Node construction, used by the op free functions.
  Var make(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, int)> backward_fn);
  Tensor& grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Tensor& value_of(int id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backward_fn;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;

  friend struct Var;
};

// ---- primitive operations -------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var matmul(Var a, Var b);     // (m,k)x(k,n)
Var matmul_nt(Var a, Var b);  // a x b^T
Var matmul_tn(Var a, Var b);  // a^T x b

// x (m,in) * W(out,in)^T + bias(1,out); bias may be {} for none.
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);

Var leaky_relu(Var x, double slope);
Var tanh_op(Var x);
Var gelu(Var x);

// Row-wise softmax over entries with mask != 0; masked entries exactly 0.
Var masked_softmax(Var scores, const std::vector<std::uint8_t>& mask);

Var add_rowvec(Var m, Var v);              // m(r,c) + v(1,c) broadcast down rows
Var add_colvec(Var m, Var u);              // m(r,c) + u(r,1) broadcast across cols
Var add_const(Var m, const Tensor& c);     // constant offset
Var mul_scalar_var(Var m, Var s);          // s is 1x1

Var sum_all(Var x);   // -> 1x1
Var mean_all(Var x);  // -> 1x1
Var col_mean(Var m);  // mean over rows -> 1xc

Var reshape(Var x, std::vector<std::size_t> shape);
Var slice_rows(Var m, std::size_t r0, std::size_t r1);
Var slice_cols(Var m, std::size_t c0, std::size_t c1);
Var row(Var m, std::size_t r);
Var element(Var m, std::size_t r, std::size_t c);  // -> 1x1
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Row-wise layer normalization with learnable gain/offset (1,c each).
Var layer_norm(Var x, Var gain, Var offset);

// Inverted dropout; identity when !training or p == 0.
Var dropout(Var x, double p, SplitMix64& rng, bool training);

Var mse(Var pred, Var target);

}  // namespace omni::numerics
