/**
 * @file ops.hpp
 * @brief Differentiable tensor operations used by the STQENet model.
 *
 * Forward values are double precision; every op records a backward rule when
 * any input requires a gradient. Broadcasting is limited to add_bias.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "csifb/tensor.hpp"

namespace csifb::ad {

/// [r x k] x [k x c] -> [r x c].
Tensor matmul(const Tensor& a, const Tensor& b);

/// [g x n x k] x [g x k x c] -> [g x n x c]; with transpose_b, b is [g x c x k].
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x [r x k] * weight [k x c] + bias [c].
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Multi-head softmax(Q K^T / sqrt(d/heads)) V for queries [g x n x d] over
/// keys/values [g x nk x d]; head h uses feature columns [h*d/P, (h+1)*d/P).
/// Adds the query-key multiply-accumulates to *score_macs when given.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                    std::uint64_t* score_macs = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// Adds a vector along `axis` (0 for channel-first maps, rank-1 for tokens).
Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis);

/// Sum of all elements, as a scalar.
Tensor sum(const Tensor& x);
/// Sum of squared elements, as a scalar.
Tensor sum_squares(const Tensor& x);

enum class Activation { kGelu, kTanh, kSigmoid };

Tensor activation(const Tensor& x, Activation kind);
inline Tensor gelu(const Tensor& x) { return activation(x, Activation::kGelu); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::kTanh); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }

Tensor softmax(const Tensor& x, std::size_t axis);

constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
/// Concatenates along axis 0.
Tensor concat(const std::vector<Tensor>& parts);

/// [d x L x L] -> [m^2 x W^2 x d], windows and tokens in row-major order.
Tensor window_partition(const Tensor& x, std::size_t window);
/// Inverse of window_partition for a map of side `side`.
Tensor window_merge(const Tensor& windows, std::size_t side);

struct Padding {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Padding() = default;
  Padding(std::size_t both) : rows(both), cols(both) {}  // NOLINT(implicit)
  Padding(std::size_t r, std::size_t c) : rows(r), cols(c) {}
};

/// Cross-correlation of x [c_in x h x w] with kernel [c_out x c_in x kh x kw].
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, Padding padding);

/// Adjoint of conv2d for the same kernel: x [c_out x h x w] -> [c_in x h' x w']
/// with h' = (h - 1) * stride - 2 * padding + kh.
Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel, std::size_t stride, Padding padding);

}  // namespace csifb::ad
