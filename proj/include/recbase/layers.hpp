#pragma once

#include <span>
#include <vector>

#include "recbase/tensor.hpp"

namespace recbase::nn {

// Functional layer kernels with hand-written backward passes. Backward
// functions accumulate (+=) into parameter gradients and return (or
// overwrite) input gradients.

/// y[n, out] = x[n, in] * w[in, out] + b[out]
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
/// Accumulates dw, db; returns dx.
Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db);

enum class Activation { kGelu, kRelu };

Tensor activation_forward(Activation act, const Tensor& x);
Tensor activation_backward(Activation act, const Tensor& x, const Tensor& dy);

struct LayerNormCache {
  std::vector<double> mean;
  std::vector<double> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise normalization over the trailing dimension.
Tensor layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          LayerNormCache& cache);
Tensor layer_norm_backward(const Tensor& x, const Tensor& gamma, const LayerNormCache& cache,
                           const Tensor& dy, Tensor& dgamma, Tensor& dbeta);

/// Target value that excludes a row from the loss.
inline constexpr int kIgnoreTarget = -1;

struct CrossEntropyResult {
  double loss_sum = 0.0;  // sum of -log p over counted rows
  size_t count = 0;       // rows with a target
  Tensor dlogits;         // d(loss_sum)/d(logits); scale by the caller's normalizer
};

/// Row-wise softmax cross-entropy over logits[n, V].
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Numerically stable log-softmax of one row restricted to [begin, end).
std::vector<double> log_softmax(std::span<const double> logits);

struct AttentionCache {
  size_t heads = 0;
  Tensor probs;  // [heads, T, T], upper triangle zero
};

/// Multi-head causal self-attention over packed qkv[T, 3H] (q | k | v).
/// Returns the concatenated head outputs [T, H].
Tensor causal_self_attention_forward(const Tensor& qkv, size_t heads, AttentionCache& cache);
/// Returns dqkv[T, 3H].
Tensor causal_self_attention_backward(const Tensor& qkv, const AttentionCache& cache,
                                      const Tensor& dout);

// Elementwise helpers.
void add_inplace(Tensor& dst, const Tensor& src);
Tensor add(const Tensor& a, const Tensor& b);

}  // namespace recbase::nn
