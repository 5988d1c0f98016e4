#include "ssc/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "binio.hpp"

namespace ssc {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& what) {
  if (offset + 4 > bytes.size()) throw Error(ErrorKind::Truncated, what + ": header truncated");
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr char kBatchMagic[4] = {'S', 'S', 'C', 'B'};

LabeledDataset load_cifar_records(const std::vector<std::filesystem::path>& paths,
                                  std::size_t label_bytes, std::size_t label_offset,
                                  std::size_t classes, const std::string& name) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  const std::size_t record = label_bytes + kPixels;
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& path : paths) {
    const auto bytes = binio::read_file(path);
    if (bytes.empty() || bytes.size() % record != 0) {
      throw Error(ErrorKind::Truncated, path.string() + ": size " + std::to_string(bytes.size()) +
                                            " is not a multiple of " + std::to_string(record));
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      const int label = bytes[off + label_offset];
      if (static_cast<std::size_t>(label) >= classes) {
        throw Error(ErrorKind::OutOfRange, path.string() + ": label " + std::to_string(label) +
                                               " exceeds " + std::to_string(classes - 1));
      }
      labels.push_back(label);
      for (std::size_t i = 0; i < kPixels; ++i) pixels.push_back(bytes[off + label_bytes + i] / 255.0);
    }
  }
  const std::size_t n = labels.size();
  return make_dataset(Tensor(Shape{n, 3, 32, 32}, std::move(pixels)), std::move(labels), name,
                      classes);
}

}  // namespace

Shape LabeledDataset::sample_shape() const {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

void LabeledDataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "dataset '" + name + "': images " +
                                              shape_str(images.shape()) + " with " +
                                              std::to_string(labels.size()) + " labels");
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::OutOfRange, "dataset '" + name + "': pixel outside [0,1]");
    }
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw Error(ErrorKind::OutOfRange, "dataset '" + name + "': label " + std::to_string(l) +
                                             " outside [0," + std::to_string(class_count) + ")");
    }
  }
}

LabeledDataset make_dataset(Tensor images, std::vector<int> labels, std::string name,
                            std::size_t class_count) {
  LabeledDataset d{std::move(images), std::move(labels), std::move(name), class_count};
  d.validate();
  return d;
}

LabeledDataset load_mnist_idx(const std::filesystem::path& image_path,
                              const std::filesystem::path& label_path) {
  const auto img = binio::read_file(image_path);
  const auto lab = binio::read_file(label_path);
  const std::string iname = image_path.string();
  const std::string lname = label_path.string();
  if (read_be32(img, 0, iname) != kIdxImageMagic) {
    throw Error(ErrorKind::BadMagic, iname + ": not an IDX image file");
  }
  if (read_be32(lab, 0, lname) != kIdxLabelMagic) {
    throw Error(ErrorKind::BadMagic, lname + ": not an IDX label file");
  }
  const std::size_t n = read_be32(img, 4, iname);
  const std::size_t rows = read_be32(img, 8, iname);
  const std::size_t cols = read_be32(img, 12, iname);
  const std::size_t nl = read_be32(lab, 4, lname);
  if (n != nl) {
    throw Error(ErrorKind::ShapeMismatch, "IDX image count " + std::to_string(n) +
                                              " differs from label count " + std::to_string(nl));
  }
  if (img.size() < 16 + n * rows * cols) throw Error(ErrorKind::Truncated, iname + ": truncated");
  if (lab.size() < 8 + n) throw Error(ErrorKind::Truncated, lname + ": truncated");

  std::vector<double> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = img[16 + i] / 255.0;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = lab[8 + i];
  return make_dataset(Tensor(Shape{n, 1, rows, cols}, std::move(pixels)), std::move(labels),
                      "mnist", 10);
}

LabeledDataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  return load_cifar_records(paths, 1, 0, 10, "cifar10");
}

LabeledDataset load_cifar100_bin(const std::vector<std::filesystem::path>& paths,
                                 bool fine_labels) {
  return load_cifar_records(paths, 2, fine_labels ? 1 : 0, fine_labels ? 100 : 20, "cifar100");
}

LabeledDataset subset(const LabeledDataset& data, std::size_t n, std::uint64_t seed) {
  const std::size_t total = data.size();
  if (n > total) {
    throw Error(ErrorKind::InvalidArgument, "subset: requested " + std::to_string(n) + " of " +
                                                std::to_string(total) + " samples");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> picked;
  const std::size_t classes = data.class_count;
  if (classes > 0 && n >= classes) {
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t idx : order) by_class[static_cast<std::size_t>(data.labels[idx])].push_back(idx);
    std::vector<std::size_t> quota(classes, n / classes);
    for (std::size_t c = 0; c < n % classes; ++c) ++quota[c];
    std::vector<std::size_t> taken(classes, 0);
    for (std::size_t c = 0; c < classes; ++c) {
      taken[c] = std::min(quota[c], by_class[c].size());
      picked.insert(picked.end(), by_class[c].begin(),
                    by_class[c].begin() + static_cast<std::ptrdiff_t>(taken[c]));
    }
    // top up from classes that still have spare samples, in class order
    for (std::size_t c = 0; c < classes && picked.size() < n; ++c) {
      while (taken[c] < by_class[c].size() && picked.size() < n) picked.push_back(by_class[c][taken[c]++]);
    }
    std::shuffle(picked.begin(), picked.end(), rng);
  } else {
    picked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  }

  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t idx : picked) labels.push_back(data.labels[idx]);
  Tensor images = picked.empty()
                      ? Tensor::zeros([&] { Shape s = data.images.shape(); s[0] = 0; return s; }())
                      : gather_batch(data.images, picked);
  return LabeledDataset{std::move(images), std::move(labels), data.name, data.class_count};
}

LabeledDataset synthetic_blob_stripes(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.1);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::vector<double> pixels(n * size * size);
  std::vector<int> labels(n);
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  for (std::size_t s = 0; s < n; ++s) {
    const int label = static_cast<int>(s % 2);
    labels[s] = label;
    const double cy = centre + jitter(rng), cx = centre + jitter(rng);
    const std::size_t phase = static_cast<std::size_t>(rng() % 2);
    double* img = pixels.data() + s * size * size;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        double v;
        if (label == 0) {
          const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          v = std::exp(-r2 / (0.08 * static_cast<double>(size * size)));
        } else {
          v = ((x + phase) / 2) % 2 == 0 ? 0.85 : 0.05;
        }
        img[y * size + x] = std::clamp(v * 0.9 + noise(rng), 0.0, 1.0);
      }
    }
  }
  return make_dataset(Tensor(Shape{n, 1, size, size}, std::move(pixels)), std::move(labels),
                      "synthetic_blob_stripes", 2);
}

std::vector<std::uint8_t> encode_batch(const ImageBatch& batch) {
  binio::Writer w;
  w.bytes(kBatchMagic, 4);
  w.u32(kBatchFormatVersion);
  w.u32(static_cast<std::uint32_t>(batch.images.rank()));
  for (std::size_t d : batch.images.shape()) w.u64(d);
  for (double v : batch.images.values()) w.f64(v);
  w.u64(batch.labels.size());
  for (int l : batch.labels) w.i32(l);
  w.seal();
  return w.buffer();
}

ImageBatch decode_batch(const std::vector<std::uint8_t>& bytes) {
  binio::Reader r(bytes);
  r.unseal("batch");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kBatchMagic)) {
    throw Error(ErrorKind::BadMagic, "batch: bad magic");
  }
  if (const auto v = r.u32(); v != kBatchFormatVersion) {
    throw Error(ErrorKind::FormatVersion, "batch: unsupported version " + std::to_string(v));
  }
  Shape shape(r.u32());
  for (auto& d : shape) d = r.u64();
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = r.f64();
  std::vector<int> labels(r.u64());
  for (auto& l : labels) l = r.i32();
  if (!r.done()) throw Error(ErrorKind::Corrupt, "batch: trailing bytes");
  return ImageBatch{Tensor(std::move(shape), std::move(values)), std::move(labels)};
}

void save_batch(const std::filesystem::path& path, const ImageBatch& batch) {
  binio::write_file(path, encode_batch(batch));
}

ImageBatch load_batch(const std::filesystem::path& path) {
  return decode_batch(binio::read_file(path));
}

}  // namespace ssc
