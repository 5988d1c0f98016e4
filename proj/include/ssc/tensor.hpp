#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssc/error.hpp"

namespace ssc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the recorded computation. Results of differentiable ops keep
// their parents alive and know how to push their gradient into them.
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  double* grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

/// Dense row-major array of doubles with optional participation in
/// reverse-mode differentiation.
///
/// Copies are shallow: two Tensor objects may refer to the same node. Use
/// clone() for an independent deep copy and detach() for a gradient-free view
/// of the same storage.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<detail::Node> node);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writes bypass the tape; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Convolution weights laid out [out_channels, in_channels, height, width].
class Kernel {
 public:
  Kernel() = default;
  explicit Kernel(Tensor weights);

  const Tensor& weights() const { return weights_; }
  Tensor& weights() { return weights_; }
  std::size_t out_channels() const { return weights_.dim(0); }
  std::size_t in_channels() const { return weights_.dim(1); }
  std::size_t height() const { return weights_.dim(2); }
  std::size_t width() const { return weights_.dim(3); }

 private:
  Tensor weights_;
};

// ---- differentiable operations -------------------------------------------

/// input [N,C,H,W] convolved (cross-correlation) with kernel [Co,C,kh,kw].
/// Output [N,Co,H',W'] with H' = (H + 2*padding - kh)/stride + 1.
Tensor conv2d(const Tensor& input, const Kernel& kernel, std::size_t stride,
              std::size_t padding);
/// Adds bias[c] to every element of channel c of x [N,C,...].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// input [N,D] times weights [D,K] plus bias [K].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
// sqrt(x + delta); delta keeps the derivative finite at x = 0.
Tensor sqrt_eps(const Tensor& x, double delta);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
/// Elementwise product. b may also have channel dimension 1 ([N,1,...]) and
/// is then broadcast across the channels of a ([N,C,...]).
Tensor elementwise_mul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
/// [N, ...] -> [N, prod(...)].
Tensor flatten(const Tensor& x);
/// Rows [begin, end) along axis 0.
Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t end);
/// Pads the two trailing axes of [N,C,H,W] by `pad` on each side, repeating
/// the nearest border pixel.
Tensor pad_replicate(const Tensor& x, std::size_t pad);
/// Scalar holding x[flat_index].
Tensor pick(const Tensor& x, std::size_t flat_index);
Tensor sum(const Tensor& x);

/// Mean over the batch of -log softmax(logits[n])[labels[n]].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---- non-differentiable helpers ------------------------------------------

/// Row-wise softmax of [N,K] logits.
Tensor softmax(const Tensor& logits);
/// Elementwise sign with sign(0) = 0.
Tensor sign(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
/// Per-row argmax of [N,K]; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& x);
/// Rows of x picked by index along axis 0.
Tensor gather_batch(const Tensor& x, std::span<const std::size_t> indices);
/// Stacks same-shape tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& items);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// the gradients of intermediate results are reset at the start of each call,
/// so one graph can be swept several times (e.g. once per logit).
void backward(const Tensor& loss);

}  // namespace ssc
