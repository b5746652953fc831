#include "emoreg/tensor.hpp"

#include <cmath>
#include <utility>

namespace emoreg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

thread_local Tape* g_current_tape = nullptr;

Tensor make_tensor(Shape shape, std::vector<float> values, bool requires_grad) {
  return Tensor::from_values(std::move(shape), std::move(values), requires_grad);
}

void check_finite(const char* op, const std::vector<float>& out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i]))
      throw NumericError(std::string(op) + ": non-finite output at flat index " + std::to_string(i));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

float* ensure_grad(TensorNode* n) {
  if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0f);
  return n->grad.data();
}

bool upstream_missing(const TensorNode* out) { return out->grad.empty(); }

// Marks the output differentiable and records the backward step if a tape is
// active and any input requires a gradient.
template <class Fn>
void maybe_record(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& backward_step) {
  Tape* tape = Tape::current();
  if (!tape) return;
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return;
  out.set_requires_grad(true);
  tape->record(std::forward<Fn>(backward_step));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) {
  node_->values.assign(1, 0.0f);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values.assign(shape_numel(node->shape), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return full(Shape{}, value, requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                     shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

float Tensor::item() const {
  if (node_->values.size() != 1)
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->values[0];
}

std::span<const float> Tensor::grad() const {
  ensure_grad(node_.get());
  return node_->grad;
}

Tensor Tensor::grad_tensor() const {
  ensure_grad(node_.get());
  return from_values(node_->shape, node_->grad, false);
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->values.size(), 0.0f);
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<TensorNode>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_current_tape) {
  g_current_tape = this;
}

Tape::~Tape() {
  g_current_tape = previous_;
}

Tape* Tape::current() {
  return g_current_tape;
}

void Tape::record(std::function<void()> step) {
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (loss.rank() != 0)
    throw ShapeError("backward: loss must be rank 0, got " + shape_str(loss.shape()));
  if (steps_.empty()) throw NumericError("backward: tape is empty");
  ensure_grad(loss.node());
  loss.node()->grad[0] = 1.0f;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {

template <class Fwd, class Bwd>
Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_same_shape(op, a, b);
  std::vector<float> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  check_finite(op, out);
  Tensor result = make_tensor(a.shape(), std::move(out), false);
  maybe_record(result, {&a, &b}, [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), bwd] {
    if (upstream_missing(on.get())) return;
    bwd(an.get(), bn.get(), on.get());
  });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "add", a, b, [](float x, float y) { return x + y; },
      [](TensorNode* an, TensorNode* bn, TensorNode* on) {
        if (an->requires_grad) {
          float* g = ensure_grad(an);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
        }
        if (bn->requires_grad) {
          float* g = ensure_grad(bn);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
        }
      });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "subtract", a, b, [](float x, float y) { return x - y; },
      [](TensorNode* an, TensorNode* bn, TensorNode* on) {
        if (an->requires_grad) {
          float* g = ensure_grad(an);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
        }
        if (bn->requires_grad) {
          float* g = ensure_grad(bn);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] -= on->grad[i];
        }
      });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "multiply", a, b, [](float x, float y) { return x * y; },
      [](TensorNode* an, TensorNode* bn, TensorNode* on) {
        if (an->requires_grad) {
          float* g = ensure_grad(an);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * bn->values[i];
        }
        if (bn->requires_grad) {
          float* g = ensure_grad(bn);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * an->values[i];
        }
      });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "divide", a, b, [](float x, float y) { return x / y; },
      [](TensorNode* an, TensorNode* bn, TensorNode* on) {
        if (an->requires_grad) {
          float* g = ensure_grad(an);
          for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] / bn->values[i];
        }
        if (bn->requires_grad) {
          float* g = ensure_grad(bn);
          for (std::size_t i = 0; i < on->grad.size(); ++i)
            g[i] -= on->grad[i] * an->values[i] / (bn->values[i] * bn->values[i]);
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

namespace {

template <class Fwd, class Bwd>
Tensor elementwise_unary(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<float> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  check_finite(op, out);
  Tensor result = make_tensor(x.shape(), std::move(out), false);
  maybe_record(result, {&x}, [xn = x.node_ptr(), on = result.node_ptr(), bwd] {
    if (upstream_missing(on.get())) return;
    if (!xn->requires_grad) return;
    float* g = ensure_grad(xn.get());
    for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += bwd(on->grad[i], xn->values[i], on->values[i]);
  });
  return result;
}

float stable_sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor tanh(const Tensor& x) {
  return elementwise_unary(
      "tanh", x, [](float v) { return std::tanh(v); },
      [](float g, float, float y) { return g * (1.0f - y * y); });
}

Tensor sigmoid(const Tensor& x) {
  return elementwise_unary(
      "sigmoid", x, [](float v) { return stable_sigmoid(v); },
      [](float g, float, float y) { return g * y * (1.0f - y); });
}

Tensor square(const Tensor& x) {
  return elementwise_unary(
      "square", x, [](float v) { return v * v; },
      [](float g, float v, float) { return g * 2.0f * v; });
}

Tensor sqrt(const Tensor& x) {
  for (float v : x.values())
    if (v < 0.0f) throw NumericError("sqrt: negative input");
  return elementwise_unary(
      "sqrt", x, [](float v) { return std::sqrt(v); },
      [](float g, float, float y) { return g * 0.5f / y; });
}

Tensor scale(const Tensor& x, float factor) {
  return elementwise_unary(
      "scale", x, [factor](float v) { return v * factor; },
      [factor](float g, float, float) { return g * factor; });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  const double n = static_cast<double>(x.size());
  std::vector<float> out{static_cast<float>(acc / n)};
  check_finite("mean", out);
  Tensor result = make_tensor(Shape{}, std::move(out), false);
  maybe_record(result, {&x}, [xn = x.node_ptr(), on = result.node_ptr(), n] {
    if (upstream_missing(on.get()) || !xn->requires_grad) return;
    float* g = ensure_grad(xn.get());
    const float gshare = static_cast<float>(static_cast<double>(on->grad[0]) / n);
    for (std::size_t i = 0; i < xn->values.size(); ++i) g[i] += gshare;
  });
  return result;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  std::vector<float> out{static_cast<float>(acc)};
  check_finite("sum", out);
  Tensor result = make_tensor(Shape{}, std::move(out), false);
  maybe_record(result, {&x}, [xn = x.node_ptr(), on = result.node_ptr()] {
    if (upstream_missing(on.get()) || !xn->requires_grad) return;
    float* g = ensure_grad(xn.get());
    for (std::size_t i = 0; i < xn->values.size(); ++i) g[i] += on->grad[0];
  });
  return result;
}

Tensor euclidean_norm(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("euclidean_norm: empty tensor");
  double acc = 0.0;
  for (float v : x.values()) acc += static_cast<double>(v) * v;
  // The epsilon keeps the gradient defined at zero difference.
  const double norm = std::sqrt(acc + 1e-12);
  std::vector<float> out{static_cast<float>(norm)};
  check_finite("euclidean_norm", out);
  Tensor result = make_tensor(Shape{}, std::move(out), false);
  maybe_record(result, {&x}, [xn = x.node_ptr(), on = result.node_ptr(), norm] {
    if (upstream_missing(on.get()) || !xn->requires_grad) return;
    float* g = ensure_grad(xn.get());
    const double gn = static_cast<double>(on->grad[0]) / norm;
    for (std::size_t i = 0; i < xn->values.size(); ++i)
      g[i] += static_cast<float>(gn * xn->values[i]);
  });
  return result;
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2))
    throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const auto av = a.values();
  const auto bv = b.values();

  if (b.rank() == 1) {
    if (b.shape()[0] != k)
      throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<float> out(m);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += static_cast<double>(av[i * k + j]) * bv[j];
      out[i] = static_cast<float>(acc);
    }
    check_finite("matmul", out);
    Tensor result = make_tensor(Shape{m}, std::move(out), false);
    maybe_record(result, {&a, &b}, [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), m, k] {
      if (upstream_missing(on.get())) return;
      if (an->requires_grad) {
        float* g = ensure_grad(an.get());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) g[i * k + j] += on->grad[i] * bn->values[j];
      }
      if (bn->requires_grad) {
        float* g = ensure_grad(bn.get());
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i)
            acc += static_cast<double>(on->grad[i]) * an->values[i * k + j];
          g[j] += static_cast<float>(acc);
        }
      }
    });
    return result;
  }

  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<float> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc += static_cast<double>(av[i * k + p]) * bv[p * n + j];
      out[i * n + j] = static_cast<float>(acc);
    }
  }
  check_finite("matmul", out);
  Tensor result = make_tensor(Shape{m, n}, std::move(out), false);
  maybe_record(result, {&a, &b}, [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), m, k, n] {
    if (upstream_missing(on.get())) return;
    if (an->requires_grad) {
      float* g = ensure_grad(an.get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            acc += static_cast<double>(on->grad[i * n + j]) * bn->values[p * n + j];
          g[i * k + p] += static_cast<float>(acc);
        }
    }
    if (bn->requires_grad) {
      float* g = ensure_grad(bn.get());
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i)
            acc += static_cast<double>(an->values[i * k + p]) * on->grad[i * n + j];
          g[p * n + j] += static_cast<float>(acc);
        }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (rank == 0 || rank > 2) throw ShapeError("concat: rank must be 1 or 2");
  if (axis >= rank) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
  for (const Tensor& p : parts) {
    if (p.rank() != rank)
      throw ShapeError("concat: mixed ranks " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && p.shape()[d] != parts[0].shape()[d])
        throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(p.shape()));
  }

  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) out_shape[axis] += p.shape()[axis];

  std::vector<float> out;
  out.reserve(shape_numel(out_shape));
  if (rank == 1 || axis == 0) {
    for (const Tensor& p : parts) {
      const auto v = p.values();
      out.insert(out.end(), v.begin(), v.end());
    }
  } else {
    // rank 2, axis 1: interleave row blocks
    const std::size_t rows = out_shape[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (const Tensor& p : parts) {
        const std::size_t c = p.shape()[1];
        const auto v = p.values();
        out.insert(out.end(), v.begin() + r * c, v.begin() + (r + 1) * c);
      }
    }
  }
  check_finite("concat", out);
  Tensor result = make_tensor(out_shape, std::move(out), false);

  Tape* tape = Tape::current();
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.requires_grad();
  if (tape && needs) {
    result.set_requires_grad(true);
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node_ptr());
    const std::size_t rows = rank == 2 ? out_shape[0] : 1;
    const std::size_t out_cols = rank == 2 ? out_shape[1] : 0;
    tape->record([nodes, on = result.node_ptr(), rank, axis, rows, out_cols] {
      if (upstream_missing(on.get())) return;
      if (rank == 1 || axis == 0) {
        std::size_t offset = 0;
        for (const NodePtr& nd : nodes) {
          if (nd->requires_grad) {
            float* g = ensure_grad(nd.get());
            for (std::size_t i = 0; i < nd->values.size(); ++i) g[i] += on->grad[offset + i];
          }
          offset += nd->values.size();
        }
      } else {
        std::size_t col_offset = 0;
        for (const NodePtr& nd : nodes) {
          const std::size_t c = nd->shape[1];
          if (nd->requires_grad) {
            float* g = ensure_grad(nd.get());
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < c; ++j)
                g[r * c + j] += on->grad[r * out_cols + col_offset + j];
          }
          col_offset += c;
        }
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<float> out(x.values().begin(), x.values().end());
  Tensor result = make_tensor(std::move(shape), std::move(out), false);
  maybe_record(result, {&x}, [xn = x.node_ptr(), on = result.node_ptr()] {
    if (upstream_missing(on.get()) || !xn->requires_grad) return;
    float* g = ensure_grad(xn.get());
    for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
  });
  return result;
}

Tensor column(const Tensor& matrix, std::size_t col) {
  if (matrix.rank() != 2)
    throw ShapeError("column: expected rank 2, got " + shape_str(matrix.shape()));
  const std::size_t rows = matrix.shape()[0];
  const std::size_t cols = matrix.shape()[1];
  if (col >= cols) throw ShapeError("column: index " + std::to_string(col) + " out of range");
  std::vector<float> out(rows);
  const auto v = matrix.values();
  for (std::size_t r = 0; r < rows; ++r) out[r] = v[r * cols + col];
  Tensor result = make_tensor(Shape{rows}, std::move(out), false);
  maybe_record(result, {&matrix}, [mn = matrix.node_ptr(), on = result.node_ptr(), rows, cols, col] {
    if (upstream_missing(on.get()) || !mn->requires_grad) return;
    float* g = ensure_grad(mn.get());
    for (std::size_t r = 0; r < rows; ++r) g[r * cols + col] += on->grad[r];
  });
  return result;
}

Tensor detach(const Tensor& x) {
  return Tensor::from_values(x.shape(), std::vector<float>(x.values().begin(), x.values().end()), false);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  std::vector<Tensor> reshaped;
  reshaped.reserve(rows.size());
  for (const Tensor& r : rows) {
    if (r.rank() != 1) throw ShapeError("stack_rows: expected rank-1 rows, got " + shape_str(r.shape()));
    reshaped.push_back(reshape(r, Shape{1, r.shape()[0]}));
  }
  return concat(reshaped, 0);
}

}  // namespace emoreg
