#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "narasr/tensor.hpp"

namespace narasr::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the upstream gradient of a node and accumulates into its inputs.
using BackwardFn = std::function<void(const Tensor& upstream, Tape& tape)>;

// Linear record of operations. Node ids are assigned in creation order, which is
// a topological order, so backward simply walks ids downwards.
class Tape {
 public:
  // When grad_enabled is false no backward closures are stored (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Adds an operation node. `fn` is kept only if some input requires grad.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

  // Gradient of the last backward() loss w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const;

  void accumulate(Var v, const Tensor& g);
  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// ---- taped operations -------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// m (r x c) + bias (1 x c) broadcast over rows
Var add_row(Var m, Var bias);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var relu(Var a);
Var softmax_rows(Var m);
Var log_softmax_rows(Var m);
// Per-row normalization with learned gain and bias (both 1 x c).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var m, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var sum(Var a);
// Mean over the listed rows of -log_softmax(logits)[row, target]. No row list
// means every row, with one target per row.
Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::span<const std::size_t> rows = {});

struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product attention with learned input and output projections.
// q: L x d, k/v: T x d. Scores are divided by sqrt(d / heads).
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, const AttentionWeights& w);

// ---- gradient checking ------------------------------------------------------

using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates sampled per parameter tensor; 0 checks every coordinate.
  std::size_t samples_per_param = 0;
  // Denominator floor so vanishing gradients compare absolutely.
  double floor = 1e-6;
  unsigned seed = 7;
};

// Worst relative error between taped gradients and central differences.
double grad_check(const ScalarFn& f, std::span<const Tensor> params,
                  const GradCheckOptions& opts = {});

}  // namespace narasr::ad
