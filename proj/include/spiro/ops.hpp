#pragma once

#include <cstddef>

#include "spiro/tensor.hpp"

namespace spiro {

// Convolutions use the cross-correlation convention. An undefined bias tensor means no bias.

/// x [N,Cin,H,W], weight [Cout,Cin,k,k] (k odd), bias [1,Cout,1,1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1,
                 int padding = 0);

/// Non-overlapping transposed convolution: kernel side equals stride, so H and W scale by stride.
/// weight [Cin, Cout/groups, s, s]; groups is 1 (dense) or Cin (per-channel).
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int groups = 1);

/// Window max; ties resolve to the first element in row-major scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride);

/// Average pooling onto an out_h x out_w grid with floor/ceil bin edges.
template <typename T>
Tensor<T> adaptive_avgpool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
struct BatchNormState {
    Tensor<T> running_mean;  // [1,C,1,1]
    Tensor<T> running_var;   // [1,C,1,1]
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization. Train mode uses batch statistics (biased variance) and updates the
/// running buffers with the unbiased variance; eval mode reads the running buffers.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> cos(const Tensor<T>& x);
template <typename T>
Tensor<T> sin(const Tensor<T>& x);

/// Softmax over the last axis; every (n, c, h) row is normalized independently.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Batched product: a [N,1,R,K] times b [N or 1,1,K,C] -> [N,1,R,C].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the two trailing axes: [N,C,H,W] -> [N,C,W,H].
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

/// Row-major reinterpretation with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// [N,C,H,W] -> [N,1,H*W,C]: one row per spatial position.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x);

/// [N,1,H*W,C] -> [N,C,H,W].
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, std::size_t h, std::size_t w);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> concat_width(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> slice_width(const Tensor<T>& x, std::size_t begin, std::size_t count);

/// sqrt(a^2 + b^2); gradient is zero where the magnitude is zero.
template <typename T>
Tensor<T> magnitude(const Tensor<T>& re, const Tensor<T>& im);

/// Four-quadrant angle atan2(im, re) in (-pi, pi], 0 at the origin. Gradient is zeroed where the
/// magnitude falls below mask_below.
template <typename T>
Tensor<T> phase(const Tensor<T>& re, const Tensor<T>& im, T mask_below);

/// Mean binary cross-entropy on logits: max(z,0) - z*y + log(1 + exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target);

}  // namespace spiro
