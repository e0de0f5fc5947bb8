#pragma once

// Differentiable operations on Graph variables. Layout is row-major; a
// "[S, n, d]" tensor is S samples of n tokens of width d. Masks use 1 for
// valid positions and 0 for masked ones.

#include <cstdint>
#include <utility>
#include <vector>

#include "clmlf/autograd.hpp"
#include "clmlf/rng.hpp"

namespace clmlf::ops {

using Mask = std::vector<std::uint8_t>;

/// x[..., k] · w[k, n] (+ b[n]). `b` may be an invalid Var.
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b = {});

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

/// x[S, n, d] + table[0:n, :], broadcast over S. Requires table rows >= n.
template <typename T>
Var add_positions(Graph<T>& g, Var x, Var table);

template <typename T>
Var scale(Graph<T>& g, Var x, T factor);

/// Exact GELU: x · Φ(x).
template <typename T>
Var gelu(Graph<T>& g, Var x);

/// Normalizes over the last axis.
template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));

/// Row lookup into table[V, d]; result shape is index_shape ++ [d].
template <typename T>
Var embedding(Graph<T>& g, Var table, const std::vector<int>& ids, const Shape& index_shape);

/// Scaled dot-product attention over q, k, v of shape [S, n, d] split into
/// `heads` heads. key_mask is [S, n]; masked keys get exactly zero weight.
/// When `probs_out` is non-null it receives the weights [S, heads, n, n].
template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const Mask& key_mask, int heads,
              Tensor<T>* probs_out = nullptr);

/// Inverted dropout. Returns `x` untouched when rate == 0.
template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Rng& rng);

/// NHWC convolution: x[S, H, W, Ci], w[kh, kw, Ci, Co], b[Co].
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride, int pad);

/// [S, n1, d] ++ [S, n2, d] along the token axis.
template <typename T>
Var concat_tokens(Graph<T>& g, Var a, Var b);

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// Softmax along the last axis restricted to mask == 1 entries; masked
/// entries are exactly zero. A fully masked row is an error.
template <typename T>
Var masked_softmax(Graph<T>& g, Var x, const Mask& mask);

/// Log-softmax along the last axis over mask == 1 entries; masked outputs
/// are zero and receive no gradient.
template <typename T>
Var masked_log_softmax(Graph<T>& g, Var x, const Mask& mask);

/// weights[S, n] against seq[S, n, d] -> [S, d].
template <typename T>
Var weighted_token_sum(Graph<T>& g, Var weights, Var seq);

/// Row-wise x / max(||x||, eps) for x[R, d].
template <typename T>
Var l2_normalize_rows(Graph<T>& g, Var x, T eps = T(1e-12));

/// a[R, d] · b[M, d]^T -> [R, M].
template <typename T>
Var matmul_nt(Graph<T>& g, Var a, Var b);

/// Mean over rows of -log softmax(logits[r])[labels[r]].
template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels);

struct GatherEntry {
  int row = 0;
  int col = 0;
  double weight = 0.0;
};

/// Σ weight · x[row, col] over entries of a 2-D x -> scalar.
template <typename T>
Var weighted_gather(Graph<T>& g, Var x, const std::vector<GatherEntry>& entries);

/// Σ coefficient · scalar.
template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<std::pair<Var, T>>& terms);

template <typename T>
Var sum(Graph<T>& g, Var x);

}  // namespace clmlf::ops
