#pragma once
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "compinfer/tensor.hpp"

namespace compinfer {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Tape-based reverse-mode autodiff over float64 tensors. A Tape records one
// forward computation; backward() then accumulates gradients for every node
// that requires them. Tapes are cheap to construct and are rebuilt per
// optimizer step. Closures never hold references into the node vector, only
// ids, so growth during forward is safe.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Elementwise (shapes must match exactly for binary ops).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var abs(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var softplus(Var a);

  // Linear algebra.
  Var matmul(Var a, Var b);                 // (m,k)x(k,n)
  Var bmm(Var a, Var b);                    // (B,m,k)x(B,k,n)
  Var linear(Var x, Var w, Var b);          // (m,in), (out,in), (out) -> (m,out)
  Var transpose_last(Var a);                // (m,n) or (B,m,n), swaps last two axes
  Var lu_solve(Var a, Var rhs);             // A X = rhs, general square A
  Var cholesky_solve(Var a, Var rhs);       // A symmetric positive definite
  Var logdet(Var a);                        // (B,n,n)->(B) or (n,n)->(1); det clamped at 1e-30

  // Structure.
  Var reshape(Var a, const std::vector<long>& shape);
  Var add_rowvec(Var a, Var r);             // (m,n) + (n)
  Var scale_cols(Var a, Var s);             // (B,m,n) * (B,n) broadcast over rows
  Var extract_diag(Var a);                  // (B,n,n) -> (B,n)
  Var diag_embed(Var dv);                   // (B,n) -> (B,n,n)
  // Lower-triangular build: strict part (B, n(n-1)/2) row-major packed, diag (B,n).
  Var tril_embed(Var strict, Var diag);
  Var concat_cols(Var a, Var b);            // (m,na) | (m,nb)
  Var stack_cols(const std::vector<Var>& xs);  // k tensors (m) -> (m,k)
  Var slice_cols(Var a, long begin, long len);
  Var gather_cols(Var a, const std::vector<long>& idx);       // (m,n) -> (m,|idx|)
  Var gather_submatrix(Var a, const std::vector<long>& idx);  // (B,n,n) -> (B,k,k)
  Var take_rows(Var a, const std::vector<long>& rows);        // first axis subset
  Var pick_per_row(Var a, const std::vector<long>& idx);      // (m,n) -> (m)

  // Reductions and row-wise transforms.
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var sum_last(Var a);                      // drop last axis
  Var dot_rows(Var a, Var b);               // (m,n),(m,n) -> (m)
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var log_sum_exp_rows(Var a);              // (m,n) -> (m)

  // Sequence ops.
  Var conv1d(Var x, Var w, Var bias);       // (B,C,L), (O,C,K), (O), stride 1, no pad
  Var mean_pool_sets(Var x, long set_size); // (T,F) -> (T/set_size, F)

  void backward(Var loss);

  const Tensor& val(Var x) const { return nodes_[x.id].value; }
  const Tensor& grad(Var x) const;
  bool has_grad(Var x) const { return grads_[x.id].numel() > 0; }
  long size() const { return static_cast<long>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };
  // Deques keep val()/grad() references stable while later ops are recorded.
  std::deque<Node> nodes_;
  std::deque<Tensor> grads_;

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
  Tensor& g(int id);       // grad accumulator, zero-allocated on first touch
  bool rg(Var x) const { return nodes_[x.id].requires_grad; }
  void check(Var x) const;
};

}  // namespace compinfer
