#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

struct Dataset {
  Tensor samples;  // [N, C, H, W] or [N, F]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(samples.shape().begin() + 1, samples.shape().end()); }
  /// Throws std::invalid_argument when N or a label is inconsistent.
  void validate() const;
  /// Samples at `indices` stacked into a batch.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> gather_labels(const std::vector<std::size_t>& indices) const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kCifarRecordBytes = 1 + 32 * 32 * 3;

/// CIFAR-10 binary batches: 3073-byte records of label + R, G, B planes.
Dataset load_cifar10_binary(const std::string& path);
Dataset load_cifar10_binary(const std::vector<std::string>& paths);
/// Inverse of load_cifar10_binary for [N, 3, 32, 32] data in [0, 1].
void save_cifar10_binary(const Dataset& data, const std::string& path);

/// IDX image/label pair. Images may be unsigned bytes (scaled to [0, 1]) or
/// float64; rank 3 image files give [N, 1, H, W], other ranks keep their shape.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
/// Writes unsigned-byte images when `as_bytes`, float64 otherwise.
void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path, bool as_bytes);

struct BlobsOptions {
  std::size_t classes = 5;
  std::size_t per_class = 200;
  std::size_t dim = 16;
  double spread = 0.5;
  std::uint64_t seed = 0;
};

/// Gaussian clusters around seeded centers on the unit sphere. Centers are
/// rejected until every pair is at least 2 * spread apart.
Dataset synth_blobs(const BlobsOptions& options);

/// Stratified split; the first element holds `1 - test_fraction` of each class.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed);

/// Per-channel (or per-feature) mean/std taken from `reference`.
struct Standardizer {
  std::vector<double> mean, stddev;
  static Standardizer fit(const Dataset& reference);
  void apply(Dataset& data) const;
};

/// Shuffled partition of [0, n) into batches of `size`; the last may be short.
/// A pure function of (n, size, seed, epoch).
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t size, std::uint64_t seed,
                                              std::uint64_t epoch);

}  // namespace distill
