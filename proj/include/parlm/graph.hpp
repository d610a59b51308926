#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "parlm/params.hpp"

namespace parlm {

// Tape-based reverse-mode autodiff over dense double matrices. A Graph is
// built per forward pass; backward() walks the tape in reverse. Node values
// are retained for the backward pass and freed with the graph.
class Graph {
 public:
  using V = int;

  V input(Mat m);
  V param(Param& p);  // cached per graph so shared weights accumulate once

  const Mat& val(V v) const { return nodes_[v].value; }

  // -- elementwise / shape ---------------------------------------------
  V matmul(V a, V b, bool trans_a = false, bool trans_b = false);
  V add(V a, V b);
  V sub(V a, V b);
  V add_rowvec(V a, V bias);  // bias 1 x C broadcast over rows
  V mul(V a, V b);
  V mul_colvec(V a, V gate);  // gate R x 1 broadcast over columns
  V mul_rowvec(V a, V gate);  // gate 1 x C broadcast over rows
  V scale(V a, double c);
  V gelu(V a);
  V sigmoid(V a);
  V softmax_rows(V a);
  V layer_norm(V a, V gain, V bias);  // gain/bias 1 x C
  V transpose(V a);
  V concat_rows(const std::vector<V>& parts);
  V concat_cols(const std::vector<V>& parts);
  V slice_rows(V a, long r0, long nrows);
  V slice_cols(V a, long c0, long ncols);
  V mean_rows(V a);  // R x C -> 1 x C
  V max_rows(V a);
  V mean_cols(V a);  // R x C -> R x 1
  V max_cols(V a);
  V sum_all(V a);  // -> 1 x 1

  // 1-D convolution along the row axis with zero padding (same length).
  // x: R x Cin, kernel: (window*Cin) x 1, output R x 1.
  V conv_rows(V x, V kernel, long window);

  // Row gather from an embedding table parameter.
  V embed(Param& table, const std::vector<int>& ids);

  // -- losses -----------------------------------------------------------
  // Mean over all entries of -w * (y log p + (1-y) log(1-p)) with
  // p = sigmoid(logits) clamped to [eps, 1-eps].
  V weighted_bce_with_logits(V logits, Mat targets, Mat weights, double eps = 1e-7);
  // Mean over unmasked rows of -log softmax(row)[target]; mask[i]=1 keeps row i.
  V softmax_xent_rows(V logits, std::vector<int> targets, std::vector<std::uint8_t> mask);

  void backward(V root);

  // Adds every parameter-leaf gradient into its Param::grad.
  void flush_param_grads();

  long node_count() const { return static_cast<long>(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool grad_ready = false;
    std::function<void()> back;  // empty for leaves
  };

  V make(Mat value, bool needs_grad);
  Mat& grad_of(V v);
  bool ng(V v) const { return nodes_[v].needs_grad; }

  // deque keeps val() references stable while the tape grows
  std::deque<Node> nodes_;
  std::vector<std::pair<Param*, V>> param_leaves_;
};

}  // namespace parlm
