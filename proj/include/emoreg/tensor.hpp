#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "emoreg/errors.hpp"

namespace emoreg {

using Shape = std::vector<std::size_t>;

// Product of dimensions; 1 for a rank-0 (scalar) shape.
std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // empty until the backward pass touches it
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major float32 tensor. Value-semantic handle over a shared node:
// copies alias the same storage, clone() deep-copies. Rank 0 is a scalar.
class Tensor {
public:
  Tensor();  // rank-0 zero

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<float> values, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }
  std::span<const float> values() const { return node_->values; }
  std::span<float> mutable_values() { return node_->values; }

  // Single stored value; requires size() == 1.
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Accumulated gradient, zero-filled on first access. Shape matches values.
  std::span<const float> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// Define-by-run gradient tape. While a Tape is alive it is "current" on its
// thread, and every op whose inputs require gradients records a backward
// step. backward() replays the record exactly once, in reverse. A tape and
// the tensors recorded on it belong to a single thread.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  bool empty() const { return steps_.empty(); }
  std::size_t size() const { return steps_.size(); }

  void record(std::function<void()> step);

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  // Requires a rank-0 loss and a nonempty tape.
  void backward(const Tensor& loss);

private:
  std::vector<std::function<void()>> steps_;
  Tape* previous_ = nullptr;
};

// Forward ops. Each validates shapes, checks outputs for non-finite values
// (error names the op) and records itself on the current tape when any input
// requires a gradient. Reductions accumulate in 64-bit.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] or [m,k]x[k]
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);  // requires nonnegative input
Tensor scale(const Tensor& x, float factor);
Tensor mean(const Tensor& x);            // -> rank 0
Tensor sum(const Tensor& x);             // -> rank 0
Tensor euclidean_norm(const Tensor& x);  // -> rank 0; sqrt(sum(x^2) + 1e-12)
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor column(const Tensor& matrix, std::size_t col);  // [n,m] -> [n]
Tensor detach(const Tensor& x);  // copy that never carries gradients

// Stacks N vectors of equal length d into an [N, d] matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);

}  // namespace emoreg
