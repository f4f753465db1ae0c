#pragma once

#include <functional>
#include <span>
#include <vector>

#include "kdar/parameters.hpp"
#include "kdar/tensor.hpp"

namespace kdar {

// Handle to a node on a Tape.
struct Var {
  std::size_t index = 0;
};

// Reverse-mode recording of dense tensor operations.
//
// Every forward op appends one node holding its value and, when any input
// requires a gradient, a closure that pushes the node's gradient back to its
// inputs. Nodes are appended in evaluation order, so a reverse sweep over
// the node list is a valid reverse topological order. Parameter leaves add
// their gradient into the owning ParameterStore.
template <typename Real>
class Tape {
 public:
  using Mat = Matrix<Real>;

  Var parameter(ParameterStore<Real>& store, ParamId id);
  Var constant(Mat value);

  // out[k] = src[ids[k]]; backward scatter-adds into src.
  Var gather_rows(Var src, std::span<const Index> ids);
  // Rows [begin, begin + count) of src.
  Var slice_rows(Var src, Index begin, Index count);

  // out[s] = sum over j with segments[j] == s of weights[j] * rows[j].
  Var weighted_segment_sum(Var rows, std::span<const Real> weights,
                           std::span<const Index> segments, Index num_segments);
  // Same with weights given as an n x 1 node, which also receives a gradient.
  Var weighted_segment_sum(Var rows, Var weights, std::span<const Index> segments,
                           Index num_segments);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Real c);

  // rows [n x d] times W [d x k].
  Var matmul(Var rows, Var w);

  // Softmax of an n x 1 logit column within each segment.
  Var grouped_softmax(Var logits, std::span<const Index> segments, Index num_segments);

  // Per-row dot product and cosine similarity, n x 1 results. A row pair in
  // which either side has zero norm has cosine 0 and receives no gradient.
  Var row_dot(Var a, Var b);
  Var row_cosine(Var a, Var b);

  // Elementwise ln(sigmoid(x)), stable for large |x|.
  Var log_sigmoid(Var x);

  Var concat_cols(Var a, Var b);

  // 1 x 1 reductions.
  Var sum(Var a);
  Var mean(Var a);
  Var sum_squares(Var a);

  const Mat& value(Var v) const { return nodes_.at(v.index).value; }
  Real scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a 1 x 1 root; accumulates into parameter gradients
  // and clears the tape. Throws std::invalid_argument for a non-scalar root.
  void backward(Var root);

  void clear() { nodes_.clear(); }

 private:
  using Backward = std::function<void(Tape&, const Mat& out_grad)>;

  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Mat value, bool requires_grad, Backward backward, const char* op);
  // Gradient buffer of v, zero-initialized on first access.
  Mat& grad_of(Var v);

  std::vector<Node> nodes_;
};

}  // namespace kdar
