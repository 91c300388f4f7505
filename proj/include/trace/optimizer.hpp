#pragma once

#include <cstddef>
#include <vector>

#include "trace/model.hpp"

namespace trace {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over the trainable tensors of a parameter list. Moments are kept per
// tensor in list order, so the list must not change between steps.
class Adam {
 public:
  Adam(std::vector<NamedParameter> params, AdamOptions options);

  // Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();

  std::size_t steps() const { return steps_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }

 private:
  std::vector<NamedParameter> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

}  // namespace trace
