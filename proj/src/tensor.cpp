#include "ssc/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace ssc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Products land in Eigen-owned (aligned) storage first: writing a GEMM straight
// into a heap buffer lets its alignment decide which entries take the vector
// path, and the rounding with it.
void add_into(double* dst, const RowMat& m) {
  const double* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

NodePtr make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<double>>(std::move(data));
  return node;
}

// Builds the result node; the backward closure is attached only if some
// parent participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(data));
  const bool track = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

const std::vector<double>& raw(const Tensor& t) { return *t.node()->data; }

void require_defined(const Tensor& t, const char* op) {
  if (!t.node()) fail(ErrorKind::InvalidArgument, std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                       shape_str(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  require_defined(x, "unary");
  const auto& in = raw(x);
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, [xn, deriv](Node& self) {
    const auto& xin = *xn->data;
    const auto& yout = *self.data;
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < xin.size(); ++i) g[i] += self.grad[i] * deriv(xin[i], yout[i]);
  });
}

// Above this magnitude 1/(1+exp(-v)) rounds to exactly 1 in double precision.
// The lower tail is flushed to 0 at the same point so that
// sigmoid(-v) == 1 - sigmoid(v) holds bit-for-bit.
constexpr double kSigmoidSaturation = 36.7368005696771;  // ln(2^53)

double stable_sigmoid(double v) {
  if (v < -kSigmoidSaturation) return 0.0;
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

// ---- shapes ----------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

double* detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data->size(), 0.0);
  return grad.data();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{0}, {}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorKind::ShapeMismatch, "tensor: shape " + shape_str(shape) + " needs " +
                                       std::to_string(shape_numel(shape)) + " values, got " +
                                       std::to_string(values.size()));
  }
  node_ = make_node(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) fail(ErrorKind::OutOfRange, "dim: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data->size(); }

std::span<const double> Tensor::values() const { return *node_->data; }

std::span<double> Tensor::mutable_values() { return *node_->data; }

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::NonScalar, "item: tensor is " + shape_str(shape()));
  return (*node_->data)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), node_->grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  return Tensor(shape(), *node_->data, requires_grad());
}

Kernel::Kernel(Tensor weights) : weights_(std::move(weights)) {
  if (weights_.rank() != 4) {
    fail(ErrorKind::ShapeMismatch,
         "kernel: weights must be [out,in,h,w], got " + shape_str(weights_.shape()));
  }
}

// ---- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Kernel& kernel, std::size_t stride,
              std::size_t padding) {
  require_defined(input, "conv2d");
  if (input.rank() != 4) {
    fail(ErrorKind::ShapeMismatch, "conv2d: input must be [N,C,H,W], got " +
                                       shape_str(input.shape()));
  }
  if (stride == 0) fail(ErrorKind::InvalidArgument, "conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t co = kernel.out_channels(), kh = kernel.height(), kw = kernel.width();
  if (kernel.in_channels() != c) {
    fail(ErrorKind::ShapeMismatch, "conv2d: kernel expects " +
                                       std::to_string(kernel.in_channels()) +
                                       " input channels, got " + std::to_string(c));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    fail(ErrorKind::DegenerateOutput, "conv2d: kernel larger than padded input");
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t patch = c * kh * kw;
  const std::size_t positions = ho * wo;
  const std::size_t cols = n * positions;

  // Unfold every receptive field into one column; the convolution is then a
  // single matrix product with the flattened kernel.
  auto col = std::make_shared<RowMat>(RowMat::Zero(static_cast<Eigen::Index>(patch),
                                                   static_cast<Eigen::Index>(cols)));
  const auto& x = raw(input);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = col->row(static_cast<Eigen::Index>((ci * kh + ki) * kw + kj)).data();
        for (std::size_t b = 0; b < n; ++b) {
          const double* plane = x.data() + (b * c + ci) * h * w;
          double* dst = row + b * positions;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[oy * wo + ox] = plane[static_cast<std::size_t>(iy) * w +
                                        static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  ConstMapMat wmat(raw(kernel.weights()).data(), static_cast<Eigen::Index>(co),
                   static_cast<Eigen::Index>(patch));
  RowMat prod = wmat * (*col);

  std::vector<double> out(n * co * positions);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      const double* src = prod.row(static_cast<Eigen::Index>(o)).data() + b * positions;
      std::copy(src, src + positions, out.data() + (b * co + o) * positions);
    }
  }

  auto xn = input.node();
  auto wn = kernel.weights().node();
  return make_result(
      Shape{n, co, ho, wo}, std::move(out), {xn, wn},
      [=](Node& self) {
        RowMat g(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(cols));
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t o = 0; o < co; ++o) {
            const double* src = self.grad.data() + (b * co + o) * positions;
            std::copy(src, src + positions, g.row(static_cast<Eigen::Index>(o)).data() + b * positions);
          }
        }
        if (wn->requires_grad) {
          add_into(wn->grad_buffer(), RowMat(g * col->transpose()));
        }
        if (xn->requires_grad) {
          ConstMapMat wm(wn->data->data(), static_cast<Eigen::Index>(co),
                         static_cast<Eigen::Index>(patch));
          RowMat gcol = wm.transpose() * g;
          double* gx = xn->grad_buffer();
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t ki = 0; ki < kh; ++ki) {
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const double* row =
                    gcol.row(static_cast<Eigen::Index>((ci * kh + ki) * kw + kj)).data();
                for (std::size_t b = 0; b < n; ++b) {
                  double* plane = gx + (b * c + ci) * h * w;
                  const double* src = row + b * positions;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                                static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                      plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] +=
                          src[oy * wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_channel_bias");
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    fail(ErrorKind::ShapeMismatch, "add_channel_bias: " + shape_str(x.shape()) + " with bias " +
                                       shape_str(bias.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c == 0 ? 1 : n * c);
  std::vector<double> out = raw(x);
  const auto& bv = raw(bias);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < inner; ++i) out[(b * c + ci) * inner + i] += bv[ci];
  auto xn = x.node();
  auto bn = bias.node();
  return make_result(x.shape(), std::move(out), {xn, bn}, [=](Node& self) {
    if (xn->requires_grad) {
      double* gx = xn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      double* gb = bn->grad_buffer();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t i = 0; i < inner; ++i) gb[ci] += self.grad[(b * c + ci) * inner + i];
    }
  });
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_defined(input, "dense");
  if (input.rank() != 2 || weights.rank() != 2 || bias.rank() != 1 ||
      input.dim(1) != weights.dim(0) || weights.dim(1) != bias.dim(0)) {
    fail(ErrorKind::ShapeMismatch, "dense: input " + shape_str(input.shape()) + ", weights " +
                                       shape_str(weights.shape()) + ", bias " +
                                       shape_str(bias.shape()));
  }
  const auto n = static_cast<Eigen::Index>(input.dim(0));
  const auto d = static_cast<Eigen::Index>(input.dim(1));
  const auto k = static_cast<Eigen::Index>(weights.dim(1));
  ConstMapMat xm(raw(input).data(), n, d);
  ConstMapMat wm(raw(weights).data(), d, k);
  Eigen::Map<const Eigen::RowVectorXd> bm(raw(bias).data(), k);
  const RowMat prod = xm * wm;
  std::vector<double> out(static_cast<std::size_t>(n * k));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out[static_cast<std::size_t>(i * k + j)] = prod(i, j) + bm[j];

  auto xn = input.node();
  auto wn = weights.node();
  auto bn = bias.node();
  return make_result(
      Shape{input.dim(0), weights.dim(1)}, std::move(out), {xn, wn, bn}, [=](Node& self) {
        ConstMapMat g(self.grad.data(), n, k);
        if (xn->requires_grad) {
          add_into(xn->grad_buffer(), RowMat(g * ConstMapMat(wn->data->data(), d, k).transpose()));
        }
        if (wn->requires_grad) {
          add_into(wn->grad_buffer(), RowMat(ConstMapMat(xn->data->data(), n, d).transpose() * g));
        }
        if (bn->requires_grad) {
          double* gb = bn->grad_buffer();
          for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < k; ++j) gb[j] += g(i, j);
        }
      });
}

// ---- elementwise -------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt_eps(const Tensor& x, double delta) {
  return unary(
      x, [delta](double v) { return std::sqrt(v + delta); },
      [](double, double y) { return 0.5 / y; });
}

Tensor scalar_mul(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

namespace {

Tensor add_scaled(const Tensor& a, const Tensor& b, double sb, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  require_same_shape(a, b, op);
  const auto& av = raw(a);
  const auto& bv = raw(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + sb * bv[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, [=](Node& self) {
    if (an->requires_grad) {
      double* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      double* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sb * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_scaled(a, b, 1.0, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_scaled(a, b, -1.0, "sub"); }

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "elementwise_mul");
  require_defined(b, "elementwise_mul");
  bool broadcast = false;
  if (a.shape() != b.shape()) {
    Shape expect = a.shape();
    if (expect.size() >= 2) expect[1] = 1;
    if (a.rank() < 2 || b.shape() != expect) {
      fail(ErrorKind::ShapeMismatch, "elementwise_mul: " + shape_str(a.shape()) + " vs " +
                                         shape_str(b.shape()));
    }
    broadcast = true;
  }
  const std::size_t n = a.rank() >= 1 ? a.dim(0) : 1;
  const std::size_t c = broadcast ? a.dim(1) : 1;
  const std::size_t inner = broadcast ? a.numel() / (n * c) : a.numel();
  const std::size_t groups = broadcast ? n : 1;
  // With broadcasting a is viewed as [groups, c, inner] and b as [groups, 1, inner].
  const auto& av = raw(a);
  const auto& bv = raw(b);
  std::vector<double> out(av.size());
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < inner; ++i)
        out[(gi * c + ci) * inner + i] = av[(gi * c + ci) * inner + i] * bv[gi * inner + i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, [=](Node& self) {
    const auto& ad = *an->data;
    const auto& bd = *bn->data;
    double* ga = an->requires_grad ? an->grad_buffer() : nullptr;
    double* gb = bn->requires_grad ? bn->grad_buffer() : nullptr;
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t ia = (gi * c + ci) * inner + i;
          const std::size_t ib = gi * inner + i;
          if (ga) ga[ia] += self.grad[ia] * bd[ib];
          if (gb) gb[ib] += self.grad[ia] * ad[ia];
        }
  });
}

// ---- shape manipulation --------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorKind::ShapeMismatch, "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto xn = x.node();
  return make_result(std::move(shape), raw(x), {xn}, [xn](Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& x) {
  require_defined(x, "flatten");
  if (x.rank() < 1) fail(ErrorKind::ShapeMismatch, "flatten: rank 0");
  const std::size_t n = x.dim(0);
  return reshape(x, Shape{n, n == 0 ? 0 : x.numel() / n});
}

Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice_batch");
  if (x.rank() < 1 || begin > end || end > x.dim(0)) {
    fail(ErrorKind::OutOfRange, "slice_batch: [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") of " + shape_str(x.shape()));
  }
  const std::size_t row = x.dim(0) == 0 ? 0 : x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  const auto& xv = raw(x);
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * row),
                          xv.begin() + static_cast<std::ptrdiff_t>(end * row));
  auto xn = x.node();
  return make_result(std::move(shape), std::move(out), {xn}, [=](Node& self) {
    double* g = xn->grad_buffer() + begin * row;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor pad_replicate(const Tensor& x, std::size_t pad) {
  require_defined(x, "pad_replicate");
  if (x.rank() != 4) fail(ErrorKind::ShapeMismatch, "pad_replicate: expected [N,C,H,W]");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == 0 || w == 0) fail(ErrorKind::DegenerateOutput, "pad_replicate: empty plane");
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  // source index for every padded position
  auto src = std::make_shared<std::vector<std::size_t>>(hp * wp);
  for (std::size_t y = 0; y < hp; ++y) {
    const std::size_t sy = std::min(h - 1, y < pad ? 0 : y - pad);
    for (std::size_t xx = 0; xx < wp; ++xx) {
      const std::size_t sx = std::min(w - 1, xx < pad ? 0 : xx - pad);
      (*src)[y * wp + xx] = sy * w + sx;
    }
  }
  const auto& xv = raw(x);
  std::vector<double> out(planes * hp * wp);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hp * wp; ++i) out[p * hp * wp + i] = xv[p * h * w + (*src)[i]];
  auto xn = x.node();
  return make_result(Shape{x.dim(0), x.dim(1), hp, wp}, std::move(out), {xn}, [=](Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < hp * wp; ++i) g[p * h * w + (*src)[i]] += self.grad[p * hp * wp + i];
  });
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  require_defined(x, "pick");
  if (flat_index >= x.numel()) fail(ErrorKind::OutOfRange, "pick: index out of range");
  auto xn = x.node();
  return make_result(Shape{1}, {raw(x)[flat_index]}, {xn}, [=](Node& self) {
    xn->grad_buffer()[flat_index] += self.grad[0];
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto& xv = raw(x);
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  auto xn = x.node();
  return make_result(Shape{1}, {total}, {xn}, [xn](Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < xn->data->size(); ++i) g[i] += self.grad[0];
  });
}

// ---- loss ----------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined(logits, "softmax_cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    fail(ErrorKind::ShapeMismatch, "softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                                       " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      fail(ErrorKind::OutOfRange, "softmax_cross_entropy: label " + std::to_string(label) +
                                      " outside [0," + std::to_string(k) + ")");
    }
  }
  const auto& z = raw(logits);
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(row[j] - mx - log_denom);
    total += -(row[labels[r]] - mx - log_denom);
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  auto ln = logits.node();
  return make_result(Shape{1}, {total / static_cast<double>(n)}, {ln}, [=](Node& self) {
    double* g = ln->grad_buffer();
    const double scale = self.grad[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        const double target = static_cast<std::size_t>(label_copy[r]) == j ? 1.0 : 0.0;
        g[r * k + j] += scale * ((*probs)[r * k + j] - target);
      }
  });
}

// ---- non-differentiable helpers --------------------------------------------------

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorKind::ShapeMismatch, "softmax: logits must be [N,K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto& z = raw(logits);
  std::vector<double> out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(row[j] - mx);
      denom += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= denom;
  }
  return Tensor(logits.shape(), std::move(out));
}

Tensor sign(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xv = raw(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0 ? 1.0 : (xv[i] < 0 ? -1.0 : 0.0);
  return Tensor(x.shape(), std::move(out));
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  std::vector<double> out(raw(x));
  for (double& v : out) v = std::clamp(v, lo, hi);
  return Tensor(x.shape(), std::move(out));
}

std::vector<int> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) fail(ErrorKind::ShapeMismatch, "argmax_rows: expected [N,K]");
  const std::size_t n = x.dim(0), k = x.dim(1);
  std::vector<int> out(n);
  const auto& xv = raw(x);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

Tensor gather_batch(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() < 1) fail(ErrorKind::ShapeMismatch, "gather_batch: rank 0");
  const std::size_t rows = x.dim(0);
  const std::size_t row = rows == 0 ? 0 : x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<double> out;
  out.reserve(indices.size() * row);
  const auto& xv = raw(x);
  for (std::size_t idx : indices) {
    if (idx >= rows) fail(ErrorKind::OutOfRange, "gather_batch: index out of range");
    out.insert(out.end(), xv.begin() + static_cast<std::ptrdiff_t>(idx * row),
               xv.begin() + static_cast<std::ptrdiff_t>((idx + 1) * row));
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) fail(ErrorKind::Empty, "stack: no tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items.front().shape().begin(), items.front().shape().end());
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& t : items) {
    require_same_shape(t, items.front(), "stack");
    out.insert(out.end(), raw(t).begin(), raw(t).end());
  }
  return Tensor(std::move(shape), std::move(out));
}

// ---- reverse sweep ---------------------------------------------------------------

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    fail(ErrorKind::NonScalar, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a topological order from the root.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack_frames;
  stack_frames.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack_frames.empty()) {
    auto& [node, next] = stack_frames.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack_frames.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack_frames.pop_back();
    }
  }

  for (Node* node : order) {
    if (node->backward_fn) node->grad.assign(node->data->size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

}  // namespace ssc
