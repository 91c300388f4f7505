#pragma once

#include <cstddef>
#include <random>
#include <span>

#include "trace/tensor.hpp"

namespace trace {

struct HeadParams {
  Tensor weight;  // W_out [labels x d]
  Tensor bias;    // b_out [labels]

  static HeadParams init(std::size_t num_labels, std::size_t d_model, double init_std,
                         std::mt19937_64& rng);
};

// sigmoid(W_out h_mask + b_out) for each sequence's mask position.
Tensor predict(const Tensor& hidden, const HeadParams& head,
               std::span<const std::size_t> mask_positions);

inline constexpr double kProbabilityClamp = 1e-12;

// Per-instance sum of binary cross-entropy over labels, averaged over the batch.
Tensor ce_loss(const Tensor& probs, std::span<const double> targets);

// ce + lambda * denoise. With lambda == 0 the result is `ce` itself.
Tensor final_loss(const Tensor& ce, const Tensor& denoise, double lambda);

}  // namespace trace
