#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

/// Images in [0,1] with one integer label per image.
struct LabeledDataset {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
  std::string name;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;  // [C,H,W]
  /// Throws unless pixels lie in [0,1] and labels in [0, class_count).
  void validate() const;
};

LabeledDataset make_dataset(Tensor images, std::vector<int> labels, std::string name,
                            std::size_t class_count);

/// Big-endian IDX pair (images 0x00000803 and labels 0x00000801). Pixels are
/// scaled by 1/255 into [N,1,rows,cols].
LabeledDataset load_mnist_idx(const std::filesystem::path& image_path,
                              const std::filesystem::path& label_path);

/// CIFAR-10 binary batches: 3073-byte records, label byte then the three
/// 1024-byte channel planes.
LabeledDataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

/// CIFAR-100 binary batches: 3074-byte records (coarse, fine, pixels).
LabeledDataset load_cifar100_bin(const std::vector<std::filesystem::path>& paths,
                                 bool fine_labels = true);

/// n samples after a seeded shuffle. When n >= class_count the draw is
/// stratified: floor(n / classes) per class, the remainder going to the
/// lowest class indices (classes short of samples are topped up from the rest).
LabeledDataset subset(const LabeledDataset& data, std::size_t n, std::uint64_t seed);

/// Two-class synthetic set: class 0 a centred bright blob, class 1 vertical
/// stripes, both with mild seeded noise. Images are [n,1,size,size].
LabeledDataset synthetic_blob_stripes(std::size_t n, std::size_t size, std::uint64_t seed);

struct ImageBatch {
  Tensor images;
  std::vector<int> labels;
};

/// Container "SSCB": magic, u32 version, shape header, little-endian f64
/// pixels, i32 labels, trailing CRC32.
std::vector<std::uint8_t> encode_batch(const ImageBatch& batch);
ImageBatch decode_batch(const std::vector<std::uint8_t>& bytes);
void save_batch(const std::filesystem::path& path, const ImageBatch& batch);
ImageBatch load_batch(const std::filesystem::path& path);

inline constexpr std::uint32_t kBatchFormatVersion = 1;

}  // namespace ssc
