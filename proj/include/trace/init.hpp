#pragma once

#include <random>

#include "trace/tensor.hpp"

namespace trace {

// Parameter initializers. All draw from the caller's engine in element order.
Tensor normal_parameter(Shape shape, double stddev, std::mt19937_64& rng);
Tensor uniform_parameter(Shape shape, double low, double high, std::mt19937_64& rng);
Tensor constant_parameter(Shape shape, double value);

}  // namespace trace
