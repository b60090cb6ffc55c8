#pragma once

#include <span>
#include <vector>

#include "rsmg/tensor.hpp"

namespace rsmg {

// Elementwise binary ops. `b` must either match `a`'s shape, hold a single
// element (scalar), be a vector of `a.dim(1)` values (per-channel, axis 1),
// or be `a`'s shape with axis 1 collapsed to 1 (a map shared by all channels).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, float s);
Tensor add_scalar(const Tensor& x, float s);

Tensor relu(const Tensor& x);
/// Exact erf formulation.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Elementwise maximum; the gradient goes to `a` on ties.
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched [B,M,K] x [B,K,N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[M,K] * w[K,N] (+ bias[N]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
/// Selects rows of a 2-D tensor (embedding lookup, row masking).
Tensor gather_rows(const Tensor& table, std::span<const int> rows);

enum class PadMode { Zero, Reflect };

/// Reflect index into [0, n) without repeating the edge sample.
int reflect_index(int i, int n);

/// Cross-correlation with "same" padding (k-1)/2; k must be odd.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr, int stride = 1,
              PadMode pad = PadMode::Zero);
Tensor pad_reflect(const Tensor& x, int top, int bottom, int left, int right);
Tensor avg_pool2(const Tensor& x);
/// Global average pool [N,C,H,W] -> [N,C].
Tensor mean_hw(const Tensor& x);
/// [N,C,H,W] -> [N,1,H,W].
Tensor channel_mean(const Tensor& x);
Tensor channel_max(const Tensor& x);

/// Softmax over the last axis with max subtraction. With `causal`, the last
/// two axes are treated as [T,T] and entries above the diagonal are masked.
Tensor softmax(const Tensor& x, bool causal = false);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces the last axis.
Tensor sum_last(const Tensor& x);

/// Row-wise L2 normalisation of [N,D]; rows with norm < 1e-8 become zero.
Tensor l2_normalize_rows(const Tensor& x);

/// Mean over rows of -sum_k target[n,k] * log_softmax(logits)[n,k]. Targets are constants.
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets);
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace rsmg
