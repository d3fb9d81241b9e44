#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "madmil/tensor.hpp"

namespace madmil::ad {

class Tape;

/// Handle to one node of a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

enum class Op {
  leaf,
  matmul,
  matmul_nt,
  transpose,
  add,
  mul,
  add_row,
  add_scalar,
  tanh,
  sigmoid,
  relu,
  softmax_instances,
  concat_columns,
  slice_columns,
  pad_columns,
  mean_rows,
  max_rows,
  sum,
  cross_entropy,
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// node index is already a topological order; backward walks it in reverse.
/// A tape is built per bag and discarded after the optimizer step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding `value`. Only leaves created with requires_grad receive
  /// gradients; everything downstream of them is tracked.
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward root w.r.t. v; zeros if v is untracked or
  /// unreachable from the root.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(root)/d(node) into every tracked node. Root must be 1x1.
  void backward(Var root);

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    std::size_t arg = 0;  // slice begin, label, or original width
    Tensor value;
    Tensor aux;   // softmax probabilities, argmax rows
    Tensor grad;  // allocated on backward
    bool requires_grad = false;
  };

  Var push(Op op, std::vector<std::size_t> inputs, Tensor value, std::size_t arg = 0,
           Tensor aux = {});
  void check_owner(Var v) const;
  void propagate(std::size_t id);
  Tensor& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;  // deque: value references survive later pushes
  mutable Tensor empty_grad_;

  friend Var matmul(Var, Var);
  friend Var matmul_nt(Var, Var);
  friend Var transpose(Var);
  friend Var add(Var, Var);
  friend Var mul(Var, Var);
  friend Var add_row(Var, Var);
  friend Var add_scalar(Var, Var);
  friend Var tanh(Var);
  friend Var sigmoid(Var);
  friend Var relu(Var);
  friend Var softmax_over_instances(Var);
  friend Var concat_columns(std::span<const Var>);
  friend Var slice_columns(Var, std::size_t, std::size_t);
  friend Var pad_columns(Var, std::size_t);
  friend Var mean_rows(Var);
  friend Var max_rows(Var);
  friend Var sum(Var);
  friend Var cross_entropy(Var, std::size_t);
};

/// a[r×k] · b[k×c]
Var matmul(Var a, Var b);
/// a[r×k] · b[c×k]ᵀ, the affine-layer product with weights stored out×in.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
/// Elementwise product (⊙).
Var mul(Var a, Var b);
/// x[N×d] + b[1×d] broadcast over rows.
Var add_row(Var x, Var bias);
/// x + s for a 1×1 s.
Var add_scalar(Var x, Var s);

Var tanh(Var x);
/// 1 / (1 + e^-x)
Var sigmoid(Var x);
Var relu(Var x);

/// Softmax down an N×1 column (max-subtracted). Throws EmptyBagError for N = 0.
Var softmax_over_instances(Var scores);

/// Lays 1-row parts side by side in the given order.
Var concat_columns(std::span<const Var> parts);
/// Columns [begin, end).
Var slice_columns(Var x, std::size_t begin, std::size_t end);
/// Zero-pads on the right up to `width` columns.
Var pad_columns(Var x, std::size_t width);

/// Column-wise mean over rows, N×D -> 1×D.
Var mean_rows(Var x);
/// Column-wise max over rows; gradient goes to the lowest-index argmax.
Var max_rows(Var x);
/// Sum of all entries, -> 1×1.
Var sum(Var x);

/// -log softmax(logits)[label] for 1×C logits, in log-sum-exp form.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace madmil::ad
