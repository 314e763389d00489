#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "sentord/nn/parameters.hpp"
#include "sentord/nn/tensor.hpp"

namespace sentord::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
};

/// Reverse-mode recording of dense matrix operations.
///
/// Every op appends a node holding its forward value and, when any input needs
/// a gradient and the tape is recording, a closure that pushes the node's
/// gradient to its inputs. Parameters enter through param(), which is memoized
/// so each parameter is one leaf per tape; their gradients are collected with
/// add_gradients_to() after backward(). A tape is single-threaded; run one per
/// worker and sum the Gradients in a fixed order.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(const ParameterSet<Scalar>& params, bool record = true);

  Var constant(Mat value);
  Var param(ParamId id);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Empty when no gradient reached the node.
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  Scalar scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  const ParameterSet<Scalar>& parameters() const { return params_; }

  /// Propagates d(loss)/d(node) to every node; loss must be 1x1. Closures are
  /// released afterwards, so a second call throws std::logic_error.
  void backward(Var loss);
  /// Adds parameter gradients into `out` (shaped like the tape's parameter set).
  void add_gradients_to(Gradients<Scalar>& out) const;
  /// Drops every node; the tape can then record a fresh forward pass.
  void reset();

  // Plumbing for op implementations.
  Var push(Mat value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Mat value, std::span<const Var> inputs, BackwardFn fn);
  /// Gradient buffer of v, zero-initialised on first use.
  Mat& grad_buffer(Var v);
  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    auto& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const ParameterSet<Scalar>& params_;
  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<std::int64_t> param_nodes_;
};

// Ops. Shapes follow Eigen: (rows x cols), rows index sequence positions.

template <typename S> Var matmul(Tape<S>& t, Var a, Var b);        ///< A B
template <typename S> Var matmul_nt(Tape<S>& t, Var a, Var b);     ///< A B^T
template <typename S> Var add(Tape<S>& t, Var a, Var b);
template <typename S> Var mul(Tape<S>& t, Var a, Var b);           ///< elementwise
template <typename S> Var add_row(Tape<S>& t, Var a, Var row);     ///< broadcast a 1 x c row
template <typename S> Var scale(Tape<S>& t, Var a, S factor);
template <typename S> Var tanh(Tape<S>& t, Var a);
template <typename S> Var gelu(Tape<S>& t, Var a);                 ///< tanh approximation
template <typename S> Var softmax_rows(Tape<S>& t, Var a);
template <typename S> Var layer_norm_rows(Tape<S>& t, Var x, Var gain, Var bias, S eps);
template <typename S> Var gather_rows(Tape<S>& t, Var table, std::span<const int> ids);
template <typename S> Var slice_rows(Tape<S>& t, Var a, Index begin, Index count);
template <typename S> Var slice_cols(Tape<S>& t, Var a, Index begin, Index count);
template <typename S> Var concat_rows(Tape<S>& t, std::span<const Var> parts);
template <typename S> Var concat_cols(Tape<S>& t, std::span<const Var> parts);
template <typename S> Var transpose(Tape<S>& t, Var a);
template <typename S> Var sum(Tape<S>& t, Var a);                  ///< 1 x 1
template <typename S> Var sum_squares(Tape<S>& t, Var a);          ///< 1 x 1
/// Mean two-class (or C-class) cross-entropy of logits rows against targets; 1 x 1.
template <typename S> Var cross_entropy(Tape<S>& t, Var logits, std::span<const int> targets);
/// Same value, no gradient flows back through it.
template <typename S> Var detach(Tape<S>& t, Var a);

}  // namespace sentord::nn
