#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "ssc/data_io.hpp"
#include "ssc/ssc_layer.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

enum class Architecture : std::uint32_t {
  CustomCnn = 1,  // Conv(64,8x8) - Conv(128,6x6) - Conv(128,5x5) - Dense
  Linear = 2,     // Flatten - Dense, used by the closed-form attack checks
  Vgg16 = 3,      // recognised, never built
};

const char* to_string(Architecture arch) noexcept;
Architecture parse_architecture(std::string_view id);

struct PreprocessLayer {
  SscConfig config;
};
struct ConvLayer {
  Kernel kernel;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct ReluLayer {};
struct FlattenLayer {};
struct DenseLayer {
  Tensor weights;  // [D,K]
  Tensor bias;     // [K]
};

using Layer = std::variant<PreprocessLayer, ConvLayer, ReluLayer, FlattenLayer, DenseLayer>;

/// Ordered layer stack producing logits. The preprocessing stage, when
/// present, is first and owns no parameters.
class Model {
 public:
  Model(Architecture arch, Shape input_shape, std::size_t classes, std::vector<Layer> layers);

  Architecture architecture() const { return arch_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t classes() const { return classes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::optional<SscConfig> ssc_config() const;

  /// Parameter handles in layer order (kernel, bias, ...). They share storage
  /// with the model.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Logits [N,K] for x [N,C,H,W]. Unless track_params is set the
  /// parameters enter the graph as constants, so a backward sweep only forms
  /// input gradients.
  Tensor forward(const Tensor& x, bool track_params = false) const;

  /// Deep copy with independent parameter storage.
  Model clone() const;

 private:
  Architecture arch_;
  Shape input_shape_;
  std::size_t classes_;
  std::vector<Layer> layers_;
};

/// Strides 2/2/1 with the first convolution padded by 3, so 28x28 inputs
/// reduce to 14x14, 5x5 and finally 1x1. Weights are drawn from
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases start at zero.
Model build_custom_cnn(const Shape& input_shape, std::size_t classes,
                       std::optional<SscConfig> ssc, std::uint64_t seed);

/// Flatten followed by a dense layer with the given weights [D,K] and bias [K].
Model build_linear(const Shape& input_shape, Tensor weights, Tensor bias,
                   std::optional<SscConfig> ssc = std::nullopt);

/// Architecture by id ("custom_cnn"; "vgg16" is rejected as too large).
Model build_architecture(std::string_view id, const Shape& input_shape, std::size_t classes,
                         std::optional<SscConfig> ssc, std::uint64_t seed);

enum class Optimizer { Sgd, Adam };

const char* to_string(Optimizer opt) noexcept;
Optimizer parse_optimizer(std::string_view text);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Sgd;
  double momentum = 0.9;  // SGD only

  void validate() const;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// Minibatch descent on softmax cross-entropy over clean samples. Throws
/// ErrorKind::Divergence when the loss stops being finite.
TrainHistory train(Model& model, const LabeledDataset& data, const TrainConfig& cfg);

struct Prediction {
  std::vector<int> labels;
  Tensor probabilities;  // [N,K]
};

Prediction predict(const Model& model, const Tensor& x);
std::vector<int> predict_labels(const Model& model, const Tensor& x);

/// "SSCM" container: magic, u32 version, architecture, input shape, class
/// count, optional preprocessing config, parameter blobs with shape headers,
/// trailing CRC32. All little-endian.
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

inline constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace ssc
