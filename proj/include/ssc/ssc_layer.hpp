#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

enum class FilterMode { Conventional, Selective };

const char* to_string(FilterMode mode) noexcept;
FilterMode parse_filter_mode(std::string_view text);

/// Parameters of the preprocessing stage.
struct SscConfig {
  std::string filter_id = "sobel_pair";
  double threshold_tk = 0.11;
  double steepness_k = 1000.0;  // sharpness of the sigmoid gate
  FilterMode mode = FilterMode::Selective;

  /// Throws on t_k outside [0,1], non-positive steepness or an unknown filter.
  void validate() const;

  bool operator==(const SscConfig&) const = default;
};

enum class Combination {
  Linear,     // single kernel, strength = |response|
  Magnitude,  // kernel pair, strength = sqrt(gx^2 + gy^2)
};

struct FilterEntry {
  std::string id;
  std::vector<Kernel> kernels;  // each [1,1,h,w]
  Combination combination = Combination::Linear;
  // Sum of the positive coefficients of one kernel; raw strengths are divided
  // by it so thresholds mean the same thing for every filter.
  double positive_l1 = 1.0;

  std::size_t size() const { return kernels.front().height(); }
};

/// laplacian4, laplacian8, sobel_x, sobel_y, sobel_pair, identity.
const std::vector<FilterEntry>& filter_bank();
const FilterEntry& find_filter(std::string_view id);

struct EdgeMap {
  Tensor values;  // [N,1,H,W]
};

struct SelectionMask {
  Tensor values;  // [N,1,H,W], entries in (0,1)
};

/// Depthwise X (*) F, spatial size preserved. Sobel pairs yield per-channel
/// magnitudes.
Tensor conventional_filter(const Tensor& x, const SscConfig& cfg);

/// Unnormalized edge strength: filter responses summed over channels, then
/// the magnitude. Borders use replicated pixels so a constant image has no
/// edges anywhere.
Tensor edge_response(const Tensor& x, const FilterEntry& filter);

/// edge_response() divided by (positive_l1 * channels); for [0,1] inputs a
/// unit step edge maps to strength 1 for every filter in the bank.
EdgeMap edge_map(const Tensor& x, const SscConfig& cfg);

/// S = sigmoid(k * (E - t_k)).
SelectionMask select_edges(const EdgeMap& edges, const SscConfig& cfg);

/// x multiplied channel-wise by the selection mask of its own edge map.
Tensor ssc_forward(const Tensor& x, const SscConfig& cfg);

/// Dispatches on cfg.mode.
Tensor apply_preprocessing(const Tensor& x, const SscConfig& cfg);

// Offset under the square root of Sobel magnitudes; keeps the derivative
// defined at a zero gradient while staying below double resolution of g^2.
inline constexpr double kMagnitudeDelta = 1e-30;

}  // namespace ssc
