#include "ssc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "binio.hpp"

namespace ssc {

namespace {

constexpr char kModelMagic[4] = {'S', 'S', 'C', 'M'};
constexpr std::size_t kPredictChunk = 128;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

Tensor as_constant(const Tensor& t, bool track) { return track ? t : t.detach(); }

}  // namespace

const char* to_string(Architecture arch) noexcept {
  switch (arch) {
    case Architecture::CustomCnn: return "custom_cnn";
    case Architecture::Linear: return "linear";
    case Architecture::Vgg16: return "vgg16";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view id) {
  if (id == "custom_cnn") return Architecture::CustomCnn;
  if (id == "linear") return Architecture::Linear;
  if (id == "vgg16") return Architecture::Vgg16;
  throw Error(ErrorKind::UnsupportedArchitecture, "unknown architecture '" + std::string(id) + "'");
}

Model::Model(Architecture arch, Shape input_shape, std::size_t classes, std::vector<Layer> layers)
    : arch_(arch), input_shape_(std::move(input_shape)), classes_(classes), layers_(std::move(layers)) {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (std::holds_alternative<PreprocessLayer>(layers_[i])) {
      throw Error(ErrorKind::InvalidArgument, "model: preprocessing must be the first layer");
    }
  }
}

std::optional<SscConfig> Model::ssc_config() const {
  if (!layers_.empty()) {
    if (const auto* p = std::get_if<PreprocessLayer>(&layers_.front())) return p->config;
  }
  return std::nullopt;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                     out.push_back(c.kernel.weights());
                     out.push_back(c.bias);
                   },
                   [&](const DenseLayer& d) {
                     out.push_back(d.weights);
                     out.push_back(d.bias);
                   },
                   [](const auto&) {},
               },
               layer);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.numel();
  return total;
}

Tensor Model::forward(const Tensor& x, bool track_params) const {
  if (x.rank() != 4 || !std::equal(input_shape_.begin(), input_shape_.end(),
                                   x.shape().begin() + 1, x.shape().end())) {
    throw Error(ErrorKind::ShapeMismatch, "model expects [N," + shape_str(input_shape_).substr(1) +
                                              ", got " + shape_str(x.shape()));
  }
  Tensor h = x;
  for (const auto& layer : layers_) {
    h = std::visit(overloaded{
                       [&](const PreprocessLayer& p) { return apply_preprocessing(h, p.config); },
                       [&](const ConvLayer& c) {
                         const Kernel k(as_constant(c.kernel.weights(), track_params));
                         return add_channel_bias(conv2d(h, k, c.stride, c.padding),
                                                 as_constant(c.bias, track_params));
                       },
                       [&](const ReluLayer&) { return relu(h); },
                       [&](const FlattenLayer&) { return flatten(h); },
                       [&](const DenseLayer& d) {
                         return dense(h, as_constant(d.weights, track_params),
                                      as_constant(d.bias, track_params));
                       },
                   },
                   layer);
  }
  return h;
}

Model Model::clone() const {
  std::vector<Layer> copy;
  copy.reserve(layers_.size());
  for (const auto& layer : layers_) {
    copy.push_back(std::visit(
        overloaded{
            [](const ConvLayer& c) -> Layer {
              return ConvLayer{Kernel(c.kernel.weights().clone()), c.bias.clone(), c.stride,
                               c.padding};
            },
            [](const DenseLayer& d) -> Layer {
              return DenseLayer{d.weights.clone(), d.bias.clone()};
            },
            [](const auto& other) -> Layer { return other; },
        },
        layer));
  }
  return Model(arch_, input_shape_, classes_, std::move(copy));
}

Model build_custom_cnn(const Shape& input_shape, std::size_t classes,
                       std::optional<SscConfig> ssc, std::uint64_t seed) {
  if (input_shape.size() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "custom_cnn: input shape must be [C,H,W]");
  }
  if (classes < 2) throw Error(ErrorKind::InvalidArgument, "custom_cnn: need at least 2 classes");
  const std::size_t c = input_shape[0];
  struct Spec {
    std::size_t out, k, stride, pad;
  };
  constexpr Spec specs[] = {{64, 8, 2, 3}, {128, 6, 2, 0}, {128, 5, 1, 0}};

  std::size_t h = input_shape[1], w = input_shape[2];
  for (const auto& s : specs) {
    h = conv_out(h, s.k, s.stride, s.pad);
    w = conv_out(w, s.k, s.stride, s.pad);
    if (h == 0 || w == 0) {
      throw Error(ErrorKind::InputTooSmall, "custom_cnn: input " + shape_str(input_shape) +
                                                " too small for the convolution stack");
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  if (ssc) {
    ssc->validate();
    layers.push_back(PreprocessLayer{*ssc});
  }
  std::size_t in = c;
  for (const auto& s : specs) {
    const std::size_t fan_in = in * s.k * s.k;
    layers.push_back(ConvLayer{Kernel(he_uniform(Shape{s.out, in, s.k, s.k}, fan_in, rng)),
                               Tensor::zeros(Shape{s.out}, true), s.stride, s.pad});
    layers.push_back(ReluLayer{});
    in = s.out;
  }
  layers.push_back(FlattenLayer{});
  const std::size_t features = in * h * w;
  layers.push_back(
      DenseLayer{he_uniform(Shape{features, classes}, features, rng), Tensor::zeros(Shape{classes}, true)});
  return Model(Architecture::CustomCnn, input_shape, classes, std::move(layers));
}

Model build_linear(const Shape& input_shape, Tensor weights, Tensor bias,
                   std::optional<SscConfig> ssc) {
  if (weights.rank() != 2 || weights.dim(0) != shape_numel(input_shape) || bias.rank() != 1 ||
      bias.dim(0) != weights.dim(1)) {
    throw Error(ErrorKind::ShapeMismatch, "linear: weights " + shape_str(weights.shape()) +
                                              " do not fit input " + shape_str(input_shape));
  }
  weights.set_requires_grad(true);
  bias.set_requires_grad(true);
  std::vector<Layer> layers;
  if (ssc) {
    ssc->validate();
    layers.push_back(PreprocessLayer{*ssc});
  }
  layers.push_back(FlattenLayer{});
  const std::size_t classes = weights.dim(1);
  layers.push_back(DenseLayer{std::move(weights), std::move(bias)});
  return Model(Architecture::Linear, input_shape, classes, std::move(layers));
}

Model build_architecture(std::string_view id, const Shape& input_shape, std::size_t classes,
                         std::optional<SscConfig> ssc, std::uint64_t seed) {
  switch (parse_architecture(id)) {
    case Architecture::CustomCnn: return build_custom_cnn(input_shape, classes, ssc, seed);
    case Architecture::Vgg16:
      throw Error(ErrorKind::UnsupportedArchitecture, "vgg16: not supported at desk scale");
    case Architecture::Linear:
      break;
  }
  throw Error(ErrorKind::UnsupportedArchitecture,
              "linear models are built from explicit weights via build_linear");
}

// ---- training --------------------------------------------------------------

const char* to_string(Optimizer opt) noexcept { return opt == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view text) {
  if (text == "sgd") return Optimizer::Sgd;
  if (text == "adam") return Optimizer::Adam;
  throw Error(ErrorKind::Config, "unknown optimizer '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidArgument, "train: epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidArgument, "train: learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "train: momentum must lie in [0,1)");
  }
}

TrainHistory train(Model& model, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw Error(ErrorKind::Empty, "train: empty dataset");
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= model.classes()) {
      throw Error(ErrorKind::OutOfRange, "train: label " + std::to_string(l) + " out of range");
    }
  }

  std::vector<Tensor> params = model.parameters();
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].numel(), 0.0);
    if (cfg.optimizer == Optimizer::Adam) m2[i].assign(params[i].numel(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
  std::size_t step = 0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainHistory history;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = gather_batch(data.images, idx);
      std::vector<int> y;
      y.reserve(idx.size());
      for (std::size_t i : idx) y.push_back(data.labels[i]);

      for (auto& p : params) p.zero_grad();
      const Tensor loss = softmax_cross_entropy(model.forward(x, true), y);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw Error(ErrorKind::Divergence, "train: loss became non-finite in epoch " +
                                               std::to_string(epoch + 1));
      }
      backward(loss);
      ++step;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) continue;
        auto w = params[i].mutable_values();
        const auto g = params[i].grad();
        if (cfg.optimizer == Optimizer::Sgd) {
          for (std::size_t j = 0; j < w.size(); ++j) {
            m1[i][j] = cfg.momentum * m1[i][j] + g[j];
            w[j] -= cfg.learning_rate * m1[i][j];
          }
        } else {
          const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
          const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
          for (std::size_t j = 0; j < w.size(); ++j) {
            m1[i][j] = kBeta1 * m1[i][j] + (1 - kBeta1) * g[j];
            m2[i][j] = kBeta2 * m2[i][j] + (1 - kBeta2) * g[j] * g[j];
            w[j] -= cfg.learning_rate * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + kAdamEps);
          }
        }
      }
      loss_sum += lv;
      ++batches;
    }
    for (auto& p : params) p.zero_grad();
    history.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return history;
}

Prediction predict(const Model& model, const Tensor& x) {
  const std::size_t n = x.rank() > 0 ? x.dim(0) : 0;
  std::vector<double> probs;
  probs.reserve(n * model.classes());
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += kPredictChunk) {
    const std::size_t end = std::min(n, begin + kPredictChunk);
    const Tensor p = softmax(model.forward(slice_batch(x.detach(), begin, end)));
    const auto l = argmax_rows(p);
    probs.insert(probs.end(), p.values().begin(), p.values().end());
    labels.insert(labels.end(), l.begin(), l.end());
  }
  return Prediction{std::move(labels), Tensor(Shape{n, model.classes()}, std::move(probs))};
}

std::vector<int> predict_labels(const Model& model, const Tensor& x) {
  return predict(model, x).labels;
}

// ---- persistence -------------------------------------------------------------

std::vector<std::uint8_t> serialize_model(const Model& model) {
  binio::Writer w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.architecture()));
  w.u32(static_cast<std::uint32_t>(model.input_shape().size()));
  for (std::size_t d : model.input_shape()) w.u64(d);
  w.u64(model.classes());
  const auto ssc = model.ssc_config();
  w.u8(ssc ? 1 : 0);
  if (ssc) {
    w.str(ssc->filter_id);
    w.f64(ssc->threshold_tk);
    w.f64(ssc->steepness_k);
    w.u8(ssc->mode == FilterMode::Selective ? 1 : 0);
  }
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape()) w.u64(d);
    for (double v : p.values()) w.f64(v);
  }
  w.seal();
  return w.buffer();
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  binio::Reader r(bytes);
  r.unseal("model");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kModelMagic)) {
    throw Error(ErrorKind::BadMagic, "model: bad magic");
  }
  if (const auto v = r.u32(); v != kModelFormatVersion) {
    throw Error(ErrorKind::FormatVersion, "model: unsupported format version " + std::to_string(v));
  }
  const auto arch = static_cast<Architecture>(r.u32());
  Shape input(r.u32());
  for (auto& d : input) d = r.u64();
  const std::size_t classes = r.u64();
  std::optional<SscConfig> ssc;
  if (r.u8()) {
    SscConfig cfg;
    cfg.filter_id = r.str();
    cfg.threshold_tk = r.f64();
    cfg.steepness_k = r.f64();
    cfg.mode = r.u8() ? FilterMode::Selective : FilterMode::Conventional;
    ssc = cfg;
  }
  std::vector<Tensor> blobs(r.u32());
  for (auto& t : blobs) {
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = r.f64();
    t = Tensor(std::move(shape), std::move(v), true);
  }
  if (!r.done()) throw Error(ErrorKind::Corrupt, "model: trailing bytes");

  if (arch == Architecture::Linear) {
    if (blobs.size() != 2) throw Error(ErrorKind::Corrupt, "model: linear needs 2 parameters");
    return build_linear(input, blobs[0], blobs[1], ssc);
  }
  if (arch != Architecture::CustomCnn) {
    throw Error(ErrorKind::UnsupportedArchitecture, "model: cannot load architecture " +
                                                        std::to_string(static_cast<unsigned>(arch)));
  }
  Model model = build_custom_cnn(input, classes, ssc, 0);
  auto params = model.parameters();
  if (params.size() != blobs.size()) throw Error(ErrorKind::Corrupt, "model: parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != blobs[i].shape()) {
      throw Error(ErrorKind::Corrupt, "model: parameter " + std::to_string(i) + " has shape " +
                                          shape_str(blobs[i].shape()));
    }
    std::copy(blobs[i].values().begin(), blobs[i].values().end(), params[i].mutable_values().begin());
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  binio::write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) {
  return deserialize_model(binio::read_file(path));
}

}  // namespace ssc
