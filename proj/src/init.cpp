#include "trace/init.hpp"

namespace trace {

Tensor normal_parameter(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(values));
}

Tensor uniform_parameter(Shape shape, double low, double high, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(low, high);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(values));
}

Tensor constant_parameter(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

}  // namespace trace
