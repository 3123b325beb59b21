#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "motret/rng.hpp"
#include "motret/tensor.hpp"

namespace motret::ad {

// Reverse-mode tape. Every op builds a Node holding the forward value and a
// closure that routes the incoming gradient to the parents. backward() walks
// nodes in reverse creation order, which is a valid topological order because
// ops only consume already-built Vars.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  long id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  void accumulate(const Tensor& g);
  Tensor& grad_ref();  // materializes zeros on first touch
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Tensor t);
  static Var leaf(Tensor t);  // trainable: participates in gradients

  bool valid() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf. `loss` must be scalar.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var vexp(const Var& x);
Var vlog(const Var& x);  // throws NumericError on non-positive input
Var vabs(const Var& x);
Var pow_scalar(const Var& x, double p);
Var gelu(const Var& x);
Var mul_scalar_var(const Var& x, const Var& s);  // s has numel 1

// ---- shape / indexing ----
Var reshape(const Var& x, std::vector<int> shape);
Var transpose2(const Var& x);                       // swap last two dims (rank 2/3)
Var permute01(const Var& x);                        // [A,B,D] -> [B,A,D]
Var slice_dim1(const Var& x, int start, int len);   // [B,L,D] -> [B,len,D]
Var concat_dim1(const std::vector<Var>& xs);        // inverse of slice_dim1
Var broadcast0(const Var& x, int n);                // [r,c] -> [n,r,c]
Var stack_rows(const std::vector<Var>& rows);       // k vars [D] -> [k,D]
Var gather_rows(const Var& table, const std::vector<int>& ids);   // [V,D] -> [k,D]
Var index_dim1(const Var& x, const std::vector<int>& idx);        // [T,J,D] -> [T,k,D]
Var heads_split(const Var& x, int heads);           // [B,L,D] -> [B*H,L,D/H]
Var heads_merge(const Var& x, int heads);           // [B*H,L,Dh] -> [B,L,H*Dh]
Var diag(const Var& x);                             // [n,n] -> [n]

// ---- reductions / broadcasting arithmetic ----
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var row_sum(const Var& x);                          // [m,n] -> [m]
Var add_rowvec(const Var& x, const Var& r);         // x[...,D] + r[D]
Var mul_colvec(const Var& x, const Var& c);         // [m,n] rows scaled by c[m]
Var masked_mean0(const Var& x, const std::vector<uint8_t>& keep);  // mean over kept dim-0 slices

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // a: [m,k] or [B,m,k] folded, b: [k,n]
Var bmm(const Var& a, const Var& b);     // [B,m,k] x [B,k,n]

// ---- normalization / activations over last dim ----
Var softmax_lastdim(const Var& x);
Var log_softmax_lastdim(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Inverted dropout with exact keep-probability scaling; identity when rate<=0.
Var dropout(const Var& x, double rate, Rng& rng);

// ---- masking ----
// Adds a large negative constant to logits of dropped keys: x is [B,Lq,Lk],
// keep has length Lk. Dropped keys underflow to exactly zero attention weight,
// so appending padded keys cannot perturb valid outputs even at the bit level.
Var add_key_mask(const Var& x, const std::vector<uint8_t>& keep);
Var mul_mask_dim0(const Var& x, const std::vector<uint8_t>& keep);  // zero dropped dim-0 slices
Var mul_mask_dim1(const Var& x, const std::vector<uint8_t>& keep);  // zero dropped dim-1 rows (rank 3)

}  // namespace motret::ad
