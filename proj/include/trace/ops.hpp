#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "trace/tensor.hpp"

// Differentiable operations. Each op records itself on the active tape when a
// tape is installed and at least one input requires a gradient; otherwise it
// runs forward only.
//
// Broadcasting is limited to "suffix" broadcasting: the right operand's shape
// must equal the trailing dimensions of the left operand's shape. That covers
// scalar, row-vector and block (e.g. [L x L] over [G x L x L]) cases.
namespace trace::ops {

// [.. x k] * [k x n] -> [.. x n]; leading dims of `a` are flattened into rows.
Tensor matmul(const Tensor& a, const Tensor& b);
// [.. x k] * [n x k]^T -> [.. x n]. Weight stored output-major.
Tensor linear(const Tensor& x, const Tensor& weight);
// Per-group products: [g x m x k] * [g x k x n] and [g x m x k] * [g x n x k]^T.
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

enum class Unary { tanh, sin, cos, square, sigmoid, gelu };
Tensor unary(Unary kind, const Tensor& a);
inline Tensor tanh(const Tensor& a) { return unary(Unary::tanh, a); }
inline Tensor sin(const Tensor& a) { return unary(Unary::sin, a); }
inline Tensor cos(const Tensor& a) { return unary(Unary::cos, a); }
inline Tensor square(const Tensor& a) { return unary(Unary::square, a); }
inline Tensor sigmoid(const Tensor& a) { return unary(Unary::sigmoid, a); }
inline Tensor gelu(const Tensor& a) { return unary(Unary::gelu, a); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sqrt(sum(a^2)); the gradient at the origin is taken as zero.
Tensor frobenius_norm(const Tensor& a);

// Softmax over the trailing dimension, max-subtracted.
Tensor softmax_rows(const Tensor& x);
// x: [batch*heads x queries x keys]; key_mask: [batch x keys], nonzero = attendable.
// Masked keys get weight exactly zero, equivalent to an additive -inf logit.
Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> key_mask,
                           std::size_t heads);

inline constexpr double kLayerNormEpsilon = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = kLayerNormEpsilon);

// Row lookup: ids laid out with `ids_shape`; result has shape ids_shape + [d].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape);
// Top-left [rows x cols] block of a matrix.
Tensor slice_block(const Tensor& x, std::size_t rows, std::size_t cols);
Tensor reshape(const Tensor& x, Shape shape);
// [b x l x d] <-> [b*heads x l x d/heads].
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);
// [b x l x d] -> [b x d], picking row positions[i] from sequence i.
Tensor select_rows(const Tensor& x, std::span<const std::size_t> positions);

// -(1/B) sum_b sum_c [y log p + (1-y) log(1-p)], p clamped to [clamp, 1-clamp].
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets,
                            double clamp = 1e-12);

}  // namespace trace::ops
