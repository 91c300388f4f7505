#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "trace/tensor.hpp"

namespace trace {

// One time-aware Transformer layer. The per-head projections W_i^Q, W_i^K,
// W_i^V (each d x d/h) are stored side by side: head i owns columns
// [i*d/h, (i+1)*d/h) of `query`, `key` and `value`.
struct LayerParams {
  Tensor query;      // [d x d]
  Tensor key;        // [d x d]
  Tensor value;      // [d x d]
  Tensor output;     // W^O [d x d]
  Tensor denoise;    // Z [(N+1) x (N+1)], shared by every head and sequence
  Tensor ffn_in;     // [d x d_ff]
  Tensor ffn_in_bias;
  Tensor ffn_out;    // [d_ff x d]
  Tensor ffn_out_bias;
  Tensor norm1_gain;
  Tensor norm1_bias;
  Tensor norm2_gain;
  Tensor norm2_bias;

  // Z ~ U[mask_low, mask_high]; everything else as usual (N(0, std), zero
  // biases, unit gains). With `frozen_mask` Z is all ones and not trainable.
  static LayerParams init(std::size_t d_model, std::size_t ffn_width, std::size_t positions,
                          double init_std, double mask_low, double mask_high, bool frozen_mask,
                          std::mt19937_64& rng);
};

struct AttentionOptions {
  std::size_t heads = 4;
  // Multiply logits by Z before scaling; false is plain scaled dot-product attention.
  bool modulate = true;
};

// Multi-head attention with logits (Q K^T * Z) / sqrt(d/h). key_mask is
// [batch x length]; zero entries are never attended to. When `weights` is
// non-null it receives the [batch*heads x length x length] attention matrix.
Tensor masked_attention(const Tensor& hidden, const LayerParams& layer,
                        std::span<const std::uint8_t> key_mask, const AttentionOptions& options,
                        Tensor* weights = nullptr);

// Position-wise FFN: W2 gelu(W1 x + b1) + b2.
Tensor feed_forward(const Tensor& hidden, const LayerParams& layer);

// H' = LayerNorm(H + Attention(H)); out = LayerNorm(H' + FFN(H')).
Tensor transformer_layer(const Tensor& hidden, const LayerParams& layer,
                         std::span<const std::uint8_t> key_mask, const AttentionOptions& options);

Tensor encode_stack(const Tensor& hidden, std::span<const LayerParams> layers,
                    std::span<const std::uint8_t> key_mask, const AttentionOptions& options);

// Sum over layers of the Frobenius norm of the full Z matrix.
Tensor denoise_loss(std::span<const LayerParams> layers);

}  // namespace trace
