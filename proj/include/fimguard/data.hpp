#pragma once

// Datasets: MNIST IDX ingestion, synthetic Gaussian blobs, and
// deterministic mini-batch ordering.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fimguard/errors.hpp"
#include "fimguard/random.hpp"
#include "fimguard/tensor.hpp"

namespace fimguard {

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

/// Images (N, C, H, W) with pixels in [0,1] and one class index per image.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }

  /// Shape of one sample without the batch axis, e.g. (1, 28, 28).
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  std::size_t sample_size() const { return images.size() / images.dim(0); }

  /// Sample i as a batch of one: (1, C, H, W).
  Tensor sample(std::size_t i) const {
    Shape shape = images.shape();
    shape[0] = 1;
    const std::size_t n = sample_size();
    return Tensor(shape, std::vector<double>(images.data() + i * n, images.data() + (i + 1) * n));
  }

  LabeledDataset subset(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw EmptySetError("subset of zero samples");
    Shape shape = images.shape();
    shape[0] = indices.size();
    const std::size_t n = sample_size();
    std::vector<double> data;
    data.reserve(indices.size() * n);
    std::vector<int> lab;
    lab.reserve(indices.size());
    for (std::size_t i : indices) {
      data.insert(data.end(), images.data() + i * n, images.data() + (i + 1) * n);
      lab.push_back(labels.at(i));
    }
    return LabeledDataset{Tensor(shape, std::move(data)), std::move(lab), num_classes};
  }

  LabeledDataset head(std::size_t count) const {
    std::vector<std::size_t> idx(std::min(count, size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return subset(idx);
  }

  /// Throws ConsistencyError when an invariant is violated.
  void validate() const {
    if (images.rank() < 2 || images.dim(0) != labels.size()) {
      throw ConsistencyError("image count does not match label count");
    }
    for (double v : images.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConsistencyError("pixel outside [0,1]");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw ConsistencyError("label " + std::to_string(y) + " outside [0, " +
                               std::to_string(num_classes) + ")");
      }
    }
  }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset) {
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

struct IdxHeader {
  std::vector<std::size_t> dims;
  std::size_t payload_offset = 0;
  std::size_t payload_size = 0;
};

// Validates magic and sizes against the actual byte count before anything
// is allocated, so arbitrary headers cannot trigger huge allocations.
inline IdxHeader parse_idx_header(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                                  std::size_t rank, const std::string& what) {
  if (bytes.size() < 4) throw IoError(what + ": file truncated before magic number");
  const std::uint32_t found = read_be32(bytes, 0);
  if (found != magic) {
    throw FormatError(what + ": bad magic " + std::to_string(found) + " (expected " +
                      std::to_string(magic) + ")");
  }
  IdxHeader h;
  h.payload_offset = 4 + 4 * rank;
  if (bytes.size() < h.payload_offset) throw IoError(what + ": file truncated inside header");
  std::size_t total = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t dim = read_be32(bytes, 4 + 4 * d);
    if (dim == 0) throw FormatError(what + ": zero-sized dimension");
    if (total > std::numeric_limits<std::size_t>::max() / dim) throw FormatError(what + ": size overflow");
    total *= dim;
    h.dims.push_back(dim);
  }
  h.payload_size = total;
  const std::size_t available = bytes.size() - h.payload_offset;
  if (available < total) {
    throw IoError(what + ": truncated payload (" + std::to_string(available) + " of " +
                  std::to_string(total) + " bytes)");
  }
  if (available > total) throw FormatError(what + ": trailing bytes after payload");
  return h;
}

}  // namespace detail

/// Reads an IDX image file (magic 2051, N x H x W unsigned bytes) and its
/// label file (magic 2049, N bytes). Pixels are scaled by 1/255.
inline LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                                     const std::filesystem::path& labels_path,
                                     std::size_t num_classes = 10,
                                     std::optional<std::size_t> max_samples = std::nullopt) {
  const auto image_bytes = detail::read_file(images_path);
  const auto label_bytes = detail::read_file(labels_path);
  const auto ih = detail::parse_idx_header(image_bytes, kIdxImageMagic, 3, images_path.string());
  const auto lh = detail::parse_idx_header(label_bytes, kIdxLabelMagic, 1, labels_path.string());
  if (ih.dims[0] != lh.dims[0]) {
    throw ConsistencyError("image count " + std::to_string(ih.dims[0]) + " != label count " +
                           std::to_string(lh.dims[0]));
  }
  const std::size_t n = max_samples ? std::min(*max_samples, ih.dims[0]) : ih.dims[0];
  if (n == 0) throw ConsistencyError("requested zero samples");
  const std::size_t pixels = ih.dims[1] * ih.dims[2];

  std::vector<double> data(n * pixels);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<double>(image_bytes[ih.payload_offset + i]) / 255.0;
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = label_bytes[lh.payload_offset + i];
    if (static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ConsistencyError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                             " exceeds class count " + std::to_string(num_classes));
    }
  }
  return LabeledDataset{Tensor(Shape{n, 1, ih.dims[1], ih.dims[2]}, std::move(data)), std::move(labels),
                        num_classes};
}

/// Writes images (N, 1, H, W) in [0,1] as an IDX ubyte file, rounding
/// pixel * 255 to the nearest byte.
inline void write_idx_images(const std::filesystem::path& path, const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("write_idx_images expects (N,1,H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  detail::write_be32(out, kIdxImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(3) * images.dim(1)));
  for (double v : images.values()) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  detail::write_be32(out, kIdxLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) out.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!out) throw IoError("write failed for " + path.string());
}

/// K Gaussian clusters of `per_class` points in [0,1]^dim, shaped
/// (K*per_class, 1, 1, dim). Means are drawn until pairwise at least 0.35
/// apart; noise sigma 0.05, values clipped to [0,1].
inline LabeledDataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                                      std::uint64_t seed) {
  if (num_classes < 2 || per_class < 1 || dim < 1) {
    throw ConfigError("synthetic_blobs needs K >= 2, N >= 1, dim >= 1");
  }
  Rng rng(seed);
  std::vector<std::vector<double>> means;
  for (std::size_t attempt = 0; means.size() < num_classes; ++attempt) {
    if (attempt > 100000) throw ConfigError("cannot place well-separated blob means");
    std::vector<double> m(dim);
    for (double& v : m) v = rng.uniform(0.15, 0.85);
    bool far = true;
    for (const auto& other : means) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) d2 += (m[j] - other[j]) * (m[j] - other[j]);
      if (d2 < 0.35 * 0.35) far = false;
    }
    if (far) means.push_back(std::move(m));
  }

  const std::size_t n = num_classes * per_class;
  const std::vector<std::size_t> order = rng.permutation(n);
  std::vector<double> data(n * dim);
  std::vector<int> labels(n);
  for (std::size_t slot = 0; slot < n; ++slot) {
    const std::size_t cls = order[slot] % num_classes;
    labels[slot] = static_cast<int>(cls);
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = means[cls][j] + 0.05 * rng.normal();
      data[slot * dim + j] = std::min(1.0, std::max(0.0, v));
    }
  }
  return LabeledDataset{Tensor(Shape{n, 1, 1, dim}, std::move(data)), std::move(labels), num_classes};
}

/// Mini-batch schedule. The (seed, epoch) pair fully determines the order.
struct BatchPlan {
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

/// Shuffled index batches covering 0..n-1 exactly once; the last batch may be
/// partial.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan) {
  if (plan.batch_size == 0 || plan.batch_size > n) {
    throw ConfigError("batch size must be in [1, " + std::to_string(n) + "]");
  }
  Rng rng(plan.seed, plan.epoch);
  const std::vector<std::size_t> order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += plan.batch_size) {
    const std::size_t stop = std::min(n, start + plan.batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

inline std::vector<Batch> batches(const LabeledDataset& data, const BatchPlan& plan) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(data.size(), plan)) {
    LabeledDataset part = data.subset(idx);
    out.push_back(Batch{std::move(part.images), std::move(part.labels)});
  }
  return out;
}

}  // namespace fimguard
