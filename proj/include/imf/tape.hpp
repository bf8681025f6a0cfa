#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "imf/tensor.hpp"

namespace imf {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

// Ragged edge groups in CSR form: edges of segment i occupy
// [offsets[i], offsets[i+1]) and point at node dst[e].
struct EdgeSegments {
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> dst;
  std::size_t num_segments() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t num_edges() const { return dst.size(); }
};
using EdgeSegmentsPtr = std::shared_ptr<const EdgeSegments>;

// Reverse-mode autodiff tape. Records every operation in topological order
// (inputs always precede their consumers, by construction) and replays the
// recorded backward rules in reverse on backward().
//
// A tape is single-owner: build a fresh one per training step and do not
// share it across threads. Tensors read from the tape are immutable values.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. requires_grad defaults to the tensor's own flag.
  Var leaf(Tensor value);
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double v) { return leaf(Tensor::scalar(v), false); }

  // Elementwise binary ops. Shapes must match, or one operand is a scalar
  // (size 1), or both are 2D with each dimension equal or 1 (broadcast).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  // Elementwise unary ops.
  Var neg(Var a);
  Var abs(Var a);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var elu(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var log(Var a);  // throws DomainError on non-positive input
  // y = m * x + c with constant m, c.
  Var affine(Var a, double m, double c);

  // Matrix product of 2D tensors: [m x k] * [k x n] -> [m x n].
  Var matmul(Var a, Var b);
  // a * b^T for a: [m x k], b: [n x k] -> [m x n].
  Var matmul_nt(Var a, Var b);

  Var reshape(Var a, Shape shape);
  Var sum_all(Var a);   // -> [1]
  Var mean_all(Var a);  // -> [1]
  Var sum_rows(Var a);  // [n x d] -> [n x 1]
  // Row selection with repetition allowed; backward scatter-adds.
  Var gather_rows(Var a, std::vector<std::uint32_t> index);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);

  // Per-row cosine similarity. a: [n x d], b: [n x d] or [1 x d] -> [n].
  // Zero rows are guarded with eps = 1e-12 in the denominator.
  Var cosine_rows(Var a, Var b);
  // All-pairs cosine: a: [n x d], b: [m x d] -> [n x m].
  Var cosine_matrix(Var a, Var b);
  // All-pairs L1 distance: a: [n x d], b: [m x d] -> [n x m].
  Var l1_distance_matrix(Var a, Var b);

  // Softmax within each edge segment. logits: [E] or [E x 1] -> same shape.
  Var segment_softmax(Var logits, EdgeSegmentsPtr segments);
  // out[i] = sum over edges e of segment i of alpha[e] * rows[dst[e]].
  // alpha: [E] or [E x 1], rows: [n x d] -> [num_segments x d].
  Var segment_weighted_sum(Var alpha, Var rows, EdgeSegmentsPtr segments);

  // Reverse pass from a scalar loss. Populates gradients for every node with
  // requires_grad. Calling twice without reset_grads() is an error.
  void backward(Var loss);
  void reset_grads();
  bool backward_run() const { return backward_run_; }

  const Tensor& value(Var v) const { return node(v.id).value; }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  // Gradient of the last backward() w.r.t. node v; shape equals value shape.
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const;
  std::size_t num_nodes() const { return nodes_.size(); }

  static constexpr double kCosineEps = 1e-12;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  const Node& node(std::uint32_t id) const;
  Node& node(std::uint32_t id);
  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> backward);
  Tensor& grad_buf(std::uint32_t id);
  void check(Var v) const;

  Var binary_elementwise(Var a, Var b, int op);
  Var unary_elementwise(Var a, int op, double p0 = 0.0, double p1 = 0.0);

  std::deque<Node> nodes_;  // deque: value() references stay valid as nodes are appended
  std::deque<Tensor> grads_;
  bool backward_run_ = false;
};

}  // namespace imf
