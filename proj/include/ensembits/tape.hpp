#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ensembits::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t tape = 0;
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Row ranges grouping the rows of a matrix into per-item segments
/// (item b owns rows [offsets[b], offsets[b+1])).
using Segments = std::vector<std::size_t>;

/// Eager reverse-accumulation recorder. Every op computes its value on
/// construction and registers a closure that pushes gradients to its inputs.
/// One tape is confined to one thread.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is collected; `slot` identifies it to the caller.
  Var parameter(const Matrix& value, int slot);
  /// Leaf that collects a gradient but is not a parameter (e.g. probed inputs).
  Var input(Matrix value);

  const Matrix& value(Var v) const;
  /// Gradient after backward(); zero matrix of matching shape when untouched.
  Matrix grad(Var v) const;
  double scalar(Var v) const;

  // ---- ops ----
  Var matmul(Var a, Var b);
  Var add_bias(Var x, Var bias);  // bias is 1 x cols, broadcast over rows
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var gelu(Var x);
  /// Vertically stacks `times` copies of x.
  Var tile_rows(Var x, std::size_t times);
  /// Row-major reshape.
  Var reshape(Var x, std::size_t rows, std::size_t cols);
  /// Selects rows by index (may repeat).
  Var gather_rows(Var x, std::vector<std::size_t> rows);
  /// Multi-head scaled dot-product attention evaluated independently per
  /// segment: queries in q_segments[b] attend to keys/values in kv_segments[b].
  /// Head h uses columns [h*dh, (h+1)*dh). Softmax sums run in ascending key order.
  Var segment_attention(Var q, Var k, Var v, const Segments& q_segments, const Segments& kv_segments,
                        std::size_t heads);
  /// Forward value passes through; backward blocks.
  Var stop_gradient(Var x);
  /// Forward value is `forward_value`; backward passes the gradient to x unchanged.
  Var straight_through(Var x, Matrix forward_value);
  /// weight * sum((a - b)^2) as a 1x1 node; both sides receive gradients.
  Var sq_error(Var a, Var b, double weight = 1.0);
  /// sum(w .* (x - target)^2) with constant target and weights.
  Var weighted_sq_error(Var x, Matrix target, Matrix weights);
  Var sum(Var x);

  /// Reverse sweep from a 1x1 node. Throws if `loss` is not a scalar on this tape.
  void backward(Var loss);

  /// (slot, gradient) for every parameter leaf, in creation order.
  struct ParamGrad {
    int slot;
    const Matrix* grad;
  };
  std::vector<ParamGrad> parameter_grads() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    int param_slot = -1;
    std::function<void(Tape&, std::int32_t)> backward;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, std::int32_t)> bw = {});
  Node& node(Var v);
  const Node& node(Var v) const;
  Matrix& grad_ref(std::int32_t id);
  void accumulate(std::int32_t id, const Matrix& g);
  bool needs(Var v) const { return node(v).needs_grad; }

  std::uint32_t tag_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Exact GELU: x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

}  // namespace ensembits::nn
