#include "trace/encoder.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "trace/errors.hpp"
#include "trace/init.hpp"
#include "trace/ops.hpp"

namespace trace {

namespace {

void check_grid(std::size_t size, std::size_t batch, std::size_t length, const char* what) {
  if (size != batch * length) {
    throw DimensionError(std::string(what) + ": grid of " + std::to_string(size) +
                         " entries is not [" + std::to_string(batch) + "x" +
                         std::to_string(length) + "]");
  }
}

}  // namespace

EncoderParams EncoderParams::init(std::size_t vocab_size, std::size_t positions,
                                  std::size_t d_model, std::size_t decay_width,
                                  double period_hours, double init_std, std::mt19937_64& rng) {
  if (d_model == 0 || decay_width == 0) throw ConfigError("encoder: widths must be positive");
  if (!(period_hours > 0.0)) throw ConfigError("encoder: period must be positive");
  EncoderParams p;
  p.token_embedding = normal_parameter({vocab_size, d_model}, init_std, rng);
  p.position_embedding = normal_parameter({positions, d_model}, init_std, rng);
  p.decay_in_weight = normal_parameter({decay_width, 1}, init_std, rng);
  p.decay_in_bias = constant_parameter({decay_width}, 0.0);
  p.decay_out_weight = normal_parameter({d_model, decay_width}, init_std, rng);
  p.decay_out_bias = constant_parameter({d_model}, 0.0);
  p.periodic_weight = normal_parameter({d_model, 2}, init_std, rng);
  p.periodic_bias = constant_parameter({d_model}, 0.0);
  p.period_hours = period_hours;
  return p;
}

Tensor code_embed(const EncoderParams& params, std::span<const std::int64_t> ids,
                  std::size_t batch, std::size_t length) {
  check_grid(ids.size(), batch, length, "code_embed");
  if (length > params.position_embedding.dim(0)) {
    throw DimensionError("code_embed: length " + std::to_string(length) + " exceeds " +
                         std::to_string(params.position_embedding.dim(0)) + " positions");
  }
  Tensor tokens = ops::embedding(params.token_embedding, ids, {batch, length});
  Tensor positions = ops::slice_block(params.position_embedding, length, params.d_model());
  return ops::add(tokens, positions);
}

Tensor decay_embed(const EncoderParams& params, std::span<const double> times, std::size_t batch,
                   std::size_t length) {
  check_grid(times.size(), batch, length, "decay_embed");
  Tensor t = Tensor::from_vector({batch, length, 1}, {times.begin(), times.end()});
  Tensor shifted = ops::sub(ops::linear(t, params.decay_in_weight), params.decay_in_bias);
  Tensor inner = ops::add_scalar(ops::scale(ops::tanh(ops::square(shifted)), -1.0), 1.0);
  return ops::sub(ops::linear(inner, params.decay_out_weight), params.decay_out_bias);
}

Tensor periodic_embed(const EncoderParams& params, std::span<const double> times,
                      std::size_t batch, std::size_t length) {
  check_grid(times.size(), batch, length, "periodic_embed");
  std::vector<double> features(times.size() * 2);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double angle = 2.0 * std::numbers::pi * times[i] / params.period_hours;
    features[2 * i] = std::sin(angle);
    features[2 * i + 1] = std::cos(angle);
  }
  Tensor f = Tensor::from_vector({batch, length, 2}, std::move(features));
  return ops::add(ops::linear(f, params.periodic_weight), params.periodic_bias);
}

Tensor encode_events(const EncoderParams& params, std::span<const std::int64_t> ids,
                     std::span<const double> times, std::size_t batch, std::size_t length,
                     const Ablation& ablation) {
  if (ids.size() != times.size()) {
    throw DimensionError("encode_events: " + std::to_string(ids.size()) + " ids but " +
                         std::to_string(times.size()) + " timestamps");
  }
  Tensor h = code_embed(params, ids, batch, length);
  if (!ablation.disable_decay) h = ops::add(h, decay_embed(params, times, batch, length));
  if (!ablation.disable_periodic) h = ops::add(h, periodic_embed(params, times, batch, length));
  return h;
}

}  // namespace trace
