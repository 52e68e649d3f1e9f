#pragma once

// Dense double-precision tensors with a reverse-mode autodiff graph.
//
// Every primitive checks operand shapes, rejects non-finite outputs, and
// registers a backward rule when any operand requires gradients. Binary
// primitives broadcast only along trailing dimensions: the second operand's
// shape must be a suffix of the first operand's shape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ofb/error.hpp"

namespace ofb {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t numel_of(const Shape& s);

// Additive floor used by log and division.
inline constexpr double kEps = 1e-12;

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // producer; null for leaves
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<double> values, Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->node == nullptr; }
  // Same values, no history, no gradient requirement.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  TensorImpl& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::string_view,
                            std::vector<Tensor>,
                            std::function<void(const TensorImpl&)>);
  std::shared_ptr<TensorImpl> impl_;
};

// A recorded primitive application.
struct Node {
  std::uint64_t id = 0;
  std::string op;
  std::vector<Tensor> inputs;
  // Reads the output gradient and accumulates into the inputs' gradients.
  std::function<void(const TensorImpl& out)> backward;
  bool consumed = false;
};

// Builds a primitive's result: validates finiteness and, if any input needs
// gradients, attaches a node carrying `backward`.
Tensor make_result(Shape shape, std::vector<double> values, std::string_view op,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward);

// Adds `g` into the gradient of `t` (allocating it on first use).
void accumulate_grad(const Tensor& t, std::span<const double> g);

// Reverse-mode sweep from a scalar loss. A second call on the same graph
// without reset_graph() throws StateError.
void backward(const Tensor& loss);
// Clears the consumed flag so the same graph may be differentiated again.
void reset_graph(const Tensor& loss);

// Counts multiply-accumulates performed by matmul while enabled. Used by the
// cost-model calibration as an instrumented FLOPs counter.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;
  std::uint64_t count() const { return count_; }
  void add(std::uint64_t n) { count_ += n; }

 private:
  std::uint64_t count_ = 0;
  MacCounter* prev_ = nullptr;
};

// Test hook: scales the incoming gradient of every node of primitive `op`
// by `factor` during backward. Pass an empty name to disable.
void set_backward_fault(std::string op, double factor);

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a / (b + eps * sign(b)); b must be free of exact zeros after the floor.
Tensor div(const Tensor& a, const Tensor& b);
// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
// log(x + eps); x must be non-negative.
Tensor log(const Tensor& x);
Tensor tan(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);
// Gradient is passed through strictly inside (lo, hi) and zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// Along the last axis.
Tensor softmax(const Tensor& x);
// Normalizes over the last axis. When `weights` is defined (shape = last
// dim) the mean and variance are weighted by it, so channels with weight 0
// are excluded from the statistics exactly.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& weights = {}, double eps = 1e-5);

// [M,K]x[K,N] or batched [B,M,K]x[B,K,N].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose_last2(const Tensor& x);
// Rows [start, start + count) along axis 0.
Tensor slice0(const Tensor& x, std::size_t start, std::size_t count);
// out[i] = x.flat[index[i]], reshaped to `shape`. Backward scatter-adds.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& index, Shape shape);
// Zero tensor of `size` elements with out[index[i]] = x.flat[i].
Tensor scatter(const Tensor& x, const std::vector<std::size_t>& index, std::size_t size);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// Mean |pred - target| over elements where mask != 0; 0 if mask is all zero.
// `target` and `mask` are constants with pred's shape (mask may be empty,
// meaning every element counts).
Tensor l1_loss(const Tensor& pred, std::span<const double> target,
               std::span<const double> mask = {});

}  // namespace ofb
