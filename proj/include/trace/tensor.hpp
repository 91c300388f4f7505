#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trace {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until a gradient is first accumulated (or the tensor is a parameter).
  std::vector<double> grad;
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// Dense row-major float64 array. Copies share storage; data is treated as
// immutable once an op has consumed it, except for parameter updates between
// optimizer steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  // Leaf tensor with requires_grad set and a zeroed gradient buffer.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor detach() const;

  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

// Define-by-run record of differentiable ops. Nodes are appended in execution
// order, so reverse append order is a valid topological order for backward.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(const char* kind, detail::ImplPtr output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded node once, newest first.
  // Returns the number of nodes whose backward actually ran.
  std::size_t backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const char* kind(std::size_t index) const { return nodes_.at(index).kind; }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* kind;
    detail::ImplPtr output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Makes `tape` the recording target for ops issued on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

}  // namespace trace
