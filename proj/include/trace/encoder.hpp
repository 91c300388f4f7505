#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "trace/tensor.hpp"

namespace trace {

// Which timestamp terms (and the attention gate) a model variant drops.
struct Ablation {
  bool disable_decay = false;
  bool disable_periodic = false;
  bool disable_mask = false;

  bool operator==(const Ablation&) const = default;
};

inline constexpr double kDefaultPeriodHours = 24.0;

// Learnable tables for the event encoder.
//   h_i = E_f[id_i] + P[i] + f_decay(t_i) + f_periodic(t_i)
//   f_decay(t)    = W_d (1 - tanh((W_t t - b_t)^2)) - b_d
//   f_periodic(t) = W_p [sin(2 pi t / w); cos(2 pi t / w)] + b_p
struct EncoderParams {
  Tensor token_embedding;     // [vocab x d]
  Tensor position_embedding;  // [(N+1) x d]
  Tensor decay_in_weight;     // [m x 1]
  Tensor decay_in_bias;       // [m]
  Tensor decay_out_weight;    // [d x m]
  Tensor decay_out_bias;      // [d]
  Tensor periodic_weight;     // [d x 2]; column 0 multiplies sin, column 1 cos
  Tensor periodic_bias;       // [d]
  double period_hours = kDefaultPeriodHours;

  static EncoderParams init(std::size_t vocab_size, std::size_t positions, std::size_t d_model,
                            std::size_t decay_width, double period_hours, double init_std,
                            std::mt19937_64& rng);

  std::size_t d_model() const { return token_embedding.dim(1); }
};

// ids and times are row-major [batch x length] grids.
Tensor code_embed(const EncoderParams& params, std::span<const std::int64_t> ids,
                  std::size_t batch, std::size_t length);
Tensor decay_embed(const EncoderParams& params, std::span<const double> times, std::size_t batch,
                   std::size_t length);
Tensor periodic_embed(const EncoderParams& params, std::span<const double> times,
                      std::size_t batch, std::size_t length);
Tensor encode_events(const EncoderParams& params, std::span<const std::int64_t> ids,
                     std::span<const double> times, std::size_t batch, std::size_t length,
                     const Ablation& ablation = {});

}  // namespace trace
