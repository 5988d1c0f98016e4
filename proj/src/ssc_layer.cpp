#include "ssc/ssc_layer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ssc {

namespace {

Kernel kernel3x3(std::initializer_list<double> coeffs) {
  return Kernel(Tensor(Shape{1, 1, 3, 3}, std::vector<double>(coeffs)));
}

double positive_sum(const Kernel& k) {
  double total = 0.0;
  for (double v : k.weights().values()) total += v > 0 ? v : 0.0;
  return total;
}

FilterEntry entry(std::string id, std::vector<Kernel> kernels, Combination combination) {
  FilterEntry e;
  e.id = std::move(id);
  e.positive_l1 = positive_sum(kernels.front());
  e.kernels = std::move(kernels);
  e.combination = combination;
  return e;
}

// The same 2-D kernel applied to every input channel and summed: [1,C,h,w].
Kernel replicate_over_channels(const Kernel& k, std::size_t channels) {
  const std::size_t area = k.height() * k.width();
  std::vector<double> w;
  w.reserve(channels * area);
  for (std::size_t c = 0; c < channels; ++c)
    w.insert(w.end(), k.weights().values().begin(), k.weights().values().end());
  return Kernel(Tensor(Shape{1, channels, k.height(), k.width()}, std::move(w)));
}

// Zero-sum kernels over flat patches leave rounding residue of a few ulps.
// Responses that small are moved to exactly zero by a constant offset, so the
// value is clean while the gradient is untouched.
Tensor snap_roundoff(const Tensor& response, const Kernel& kernel, const Tensor& input) {
  double l1 = 0.0;
  for (double v : kernel.weights().values()) l1 += std::fabs(v);
  double scale = 0.0;
  for (double v : input.values()) scale = std::max(scale, std::fabs(v));
  const double tol = 16.0 * std::numeric_limits<double>::epsilon() * l1 * scale;
  std::vector<double> offset(response.numel(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < offset.size(); ++i) {
    if (response[i] != 0.0 && std::fabs(response[i]) <= tol) {
      offset[i] = -response[i];
      any = true;
    }
  }
  return any ? add(response, Tensor(response.shape(), std::move(offset))) : response;
}

Tensor filtered(const Tensor& padded, const Kernel& k) {
  return snap_roundoff(conv2d(padded, k, 1, 0), k, padded);
}

Tensor magnitude(const Tensor& gx, const Tensor& gy) {
  // shifted so that a zero gradient gives exactly zero strength
  return add_scalar(sqrt_eps(add(square(gx), square(gy)), kMagnitudeDelta),
                    -std::sqrt(kMagnitudeDelta));
}

Tensor filter_response(const Tensor& x, const FilterEntry& filter) {
  const std::size_t pad = filter.size() / 2;
  const std::size_t channels = x.dim(1);
  // replicated borders: constant images produce no edge response anywhere
  const Tensor padded = pad > 0 ? pad_replicate(x, pad) : x;
  if (filter.combination == Combination::Linear) {
    return abs(filtered(padded, replicate_over_channels(filter.kernels[0], channels)));
  }
  return magnitude(filtered(padded, replicate_over_channels(filter.kernels[0], channels)),
                   filtered(padded, replicate_over_channels(filter.kernels[1], channels)));
}

void require_image_batch(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": expected [N,C,H,W], got " + shape_str(x.shape()));
  }
}

}  // namespace

const char* to_string(FilterMode mode) noexcept {
  return mode == FilterMode::Conventional ? "conventional" : "selective";
}

FilterMode parse_filter_mode(std::string_view text) {
  if (text == "conventional") return FilterMode::Conventional;
  if (text == "selective") return FilterMode::Selective;
  throw Error(ErrorKind::Config, "unknown filter mode '" + std::string(text) + "'");
}

void SscConfig::validate() const {
  if (!(threshold_tk >= 0.0 && threshold_tk <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "threshold_tk must lie in [0,1]");
  }
  if (!(steepness_k > 0.0) || !std::isfinite(steepness_k)) {
    throw Error(ErrorKind::InvalidArgument, "steepness_k must be positive and finite");
  }
  find_filter(filter_id);
}

const std::vector<FilterEntry>& filter_bank() {
  static const std::vector<FilterEntry> bank = [] {
    const Kernel sobel_x = kernel3x3({-1, 0, 1, -2, 0, 2, -1, 0, 1});
    const Kernel sobel_y = kernel3x3({-1, -2, -1, 0, 0, 0, 1, 2, 1});
    std::vector<FilterEntry> b;
    b.push_back(entry("laplacian4", {kernel3x3({0, -1, 0, -1, 4, -1, 0, -1, 0})},
                      Combination::Linear));
    b.push_back(entry("laplacian8", {kernel3x3({-1, -1, -1, -1, 8, -1, -1, -1, -1})},
                      Combination::Linear));
    b.push_back(entry("sobel_x", {sobel_x}, Combination::Linear));
    b.push_back(entry("sobel_y", {sobel_y}, Combination::Linear));
    b.push_back(entry("sobel_pair", {sobel_x, sobel_y}, Combination::Magnitude));
    b.push_back(entry("identity", {Kernel(Tensor(Shape{1, 1, 1, 1}, {1.0}))},
                      Combination::Linear));
    return b;
  }();
  return bank;
}

const FilterEntry& find_filter(std::string_view id) {
  for (const auto& e : filter_bank()) {
    if (e.id == id) return e;
  }
  throw Error(ErrorKind::UnknownFilter, "unknown filter_id '" + std::string(id) + "'");
}

Tensor conventional_filter(const Tensor& x, const SscConfig& cfg) {
  require_image_batch(x, "conventional_filter");
  if (cfg.mode != FilterMode::Conventional) {
    throw Error(ErrorKind::InvalidArgument, "conventional_filter: config is not conventional");
  }
  const FilterEntry& filter = find_filter(cfg.filter_id);
  if (filter.id == "identity") return x;
  const Shape shape = x.shape();
  const Tensor planes = reshape(x, Shape{shape[0] * shape[1], 1, shape[2], shape[3]});
  const std::size_t pad = filter.size() / 2;
  const Tensor padded = pad_replicate(planes, pad);
  Tensor out;
  if (filter.combination == Combination::Linear) {
    out = filtered(padded, filter.kernels[0]);
  } else {
    out = magnitude(filtered(padded, filter.kernels[0]), filtered(padded, filter.kernels[1]));
  }
  return reshape(out, shape);
}

Tensor edge_response(const Tensor& x, const FilterEntry& filter) {
  require_image_batch(x, "edge_response");
  const std::size_t channels = x.dim(1);
  if (channels != 1 && channels != 3) {
    throw Error(ErrorKind::UnsupportedChannels,
                "edge_map: expected 1 or 3 channels, got " + std::to_string(channels));
  }
  return filter_response(x, filter);
}

EdgeMap edge_map(const Tensor& x, const SscConfig& cfg) {
  const FilterEntry& filter = find_filter(cfg.filter_id);
  const Tensor raw = edge_response(x, filter);
  const double scale = filter.positive_l1 * static_cast<double>(x.dim(1));
  return EdgeMap{scalar_mul(raw, 1.0 / scale)};
}

SelectionMask select_edges(const EdgeMap& edges, const SscConfig& cfg) {
  Tensor gate = sigmoid(scalar_mul(add_scalar(edges.values, -cfg.threshold_tk), cfg.steepness_k));
  if (cfg.threshold_tk <= 0.0) return SelectionMask{gate};
  // With a positive threshold a pixel without any edge response is dropped
  // outright rather than kept at sigmoid(-k * t_k).
  std::vector<double> keep(edges.values.numel());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = edges.values[i] > 0.0 ? 1.0 : 0.0;
  return SelectionMask{elementwise_mul(gate, Tensor(edges.values.shape(), std::move(keep)))};
}

Tensor ssc_forward(const Tensor& x, const SscConfig& cfg) {
  require_image_batch(x, "ssc_forward");
  if (cfg.mode != FilterMode::Selective) {
    throw Error(ErrorKind::InvalidArgument, "ssc_forward: config is not selective");
  }
  const SelectionMask mask = select_edges(edge_map(x, cfg), cfg);
  return elementwise_mul(x, mask.values);
}

Tensor apply_preprocessing(const Tensor& x, const SscConfig& cfg) {
  return cfg.mode == FilterMode::Selective ? ssc_forward(x, cfg) : conventional_filter(x, cfg);
}

}  // namespace ssc
