#include "trace/transformer.hpp"

#include <cmath>
#include <string>

#include "trace/errors.hpp"
#include "trace/init.hpp"
#include "trace/ops.hpp"

namespace trace {

LayerParams LayerParams::init(std::size_t d_model, std::size_t ffn_width, std::size_t positions,
                              double init_std, double mask_low, double mask_high,
                              bool frozen_mask, std::mt19937_64& rng) {
  LayerParams p;
  p.query = normal_parameter({d_model, d_model}, init_std, rng);
  p.key = normal_parameter({d_model, d_model}, init_std, rng);
  p.value = normal_parameter({d_model, d_model}, init_std, rng);
  p.output = normal_parameter({d_model, d_model}, init_std, rng);
  // Drawn even when frozen so every variant shares the remaining weights.
  p.denoise = uniform_parameter({positions, positions}, mask_low, mask_high, rng);
  if (frozen_mask) p.denoise = Tensor::full({positions, positions}, 1.0);
  p.ffn_in = normal_parameter({d_model, ffn_width}, init_std, rng);
  p.ffn_in_bias = constant_parameter({ffn_width}, 0.0);
  p.ffn_out = normal_parameter({ffn_width, d_model}, init_std, rng);
  p.ffn_out_bias = constant_parameter({d_model}, 0.0);
  p.norm1_gain = constant_parameter({d_model}, 1.0);
  p.norm1_bias = constant_parameter({d_model}, 0.0);
  p.norm2_gain = constant_parameter({d_model}, 1.0);
  p.norm2_bias = constant_parameter({d_model}, 0.0);
  return p;
}

Tensor masked_attention(const Tensor& hidden, const LayerParams& layer,
                        std::span<const std::uint8_t> key_mask, const AttentionOptions& options,
                        Tensor* weights) {
  const Shape& s = hidden.shape();
  if (s.size() != 3) throw DimensionError("masked_attention: hidden must be [b x l x d]");
  const std::size_t length = s[1], d = s[2];
  if (options.heads == 0 || d % options.heads != 0) {
    throw ConfigError("masked_attention: model width " + std::to_string(d) +
                      " not divisible by " + std::to_string(options.heads) + " heads");
  }
  const std::size_t head_width = d / options.heads;

  Tensor q = ops::split_heads(ops::matmul(hidden, layer.query), options.heads);
  Tensor k = ops::split_heads(ops::matmul(hidden, layer.key), options.heads);
  Tensor v = ops::split_heads(ops::matmul(hidden, layer.value), options.heads);

  Tensor logits = ops::bmm_nt(q, k);
  if (options.modulate) logits = ops::mul(logits, ops::slice_block(layer.denoise, length, length));
  logits = ops::scale(logits, 1.0 / std::sqrt(static_cast<double>(head_width)));
  Tensor attn = ops::masked_softmax_rows(logits, key_mask, options.heads);
  if (weights) *weights = attn;

  Tensor context = ops::merge_heads(ops::bmm(attn, v), options.heads);
  return ops::matmul(context, layer.output);
}

Tensor feed_forward(const Tensor& hidden, const LayerParams& layer) {
  Tensor inner = ops::gelu(ops::add(ops::matmul(hidden, layer.ffn_in), layer.ffn_in_bias));
  return ops::add(ops::matmul(inner, layer.ffn_out), layer.ffn_out_bias);
}

Tensor transformer_layer(const Tensor& hidden, const LayerParams& layer,
                         std::span<const std::uint8_t> key_mask, const AttentionOptions& options) {
  Tensor attended = ops::layer_norm(ops::add(hidden, masked_attention(hidden, layer, key_mask, options)),
                                    layer.norm1_gain, layer.norm1_bias);
  return ops::layer_norm(ops::add(attended, feed_forward(attended, layer)), layer.norm2_gain,
                         layer.norm2_bias);
}

Tensor encode_stack(const Tensor& hidden, std::span<const LayerParams> layers,
                    std::span<const std::uint8_t> key_mask, const AttentionOptions& options) {
  if (layers.empty()) throw ContractError("encode_stack: need at least one layer");
  Tensor h = hidden;
  for (const auto& layer : layers) h = transformer_layer(h, layer, key_mask, options);
  return h;
}

Tensor denoise_loss(std::span<const LayerParams> layers) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& layer : layers) total = ops::add(total, ops::frobenius_norm(layer.denoise));
  return total;
}

}  // namespace trace
