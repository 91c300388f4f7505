#include "trace/head.hpp"

#include <string>

#include "trace/errors.hpp"
#include "trace/init.hpp"
#include "trace/ops.hpp"

namespace trace {

HeadParams HeadParams::init(std::size_t num_labels, std::size_t d_model, double init_std,
                            std::mt19937_64& rng) {
  HeadParams p;
  p.weight = normal_parameter({num_labels, d_model}, init_std, rng);
  p.bias = constant_parameter({num_labels}, 0.0);
  return p;
}

Tensor predict(const Tensor& hidden, const HeadParams& head,
               std::span<const std::size_t> mask_positions) {
  Tensor h_mask = ops::select_rows(hidden, mask_positions);
  return ops::sigmoid(ops::add(ops::linear(h_mask, head.weight), head.bias));
}

Tensor ce_loss(const Tensor& probs, std::span<const double> targets) {
  if (probs.rank() != 2 || targets.size() != probs.numel()) {
    throw DimensionError("ce_loss: probabilities " + shape_string(probs.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  return ops::binary_cross_entropy(probs, targets, kProbabilityClamp);
}

Tensor final_loss(const Tensor& ce, const Tensor& denoise, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("final_loss: lambda must be non-negative");
  if (lambda == 0.0) return ce;
  return ops::add(ce, ops::scale(denoise, lambda));
}

}  // namespace trace
