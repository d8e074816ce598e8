#include "distill/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "distill/random.hpp"

namespace distill {

void Dataset::validate() const {
  if (samples.rank() < 2 || samples.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for samples of shape " +
                                shape_string(samples.shape()));
  }
  for (auto y : labels) {
    if (y >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
  Shape shape = samples.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t width = samples.row_size();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = samples.row(indices[r]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return out;
}

std::vector<std::size_t> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("failed writing " + path);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

constexpr std::uint8_t kIdxUByte = 0x08;
constexpr std::uint8_t kIdxFloat64 = 0x0E;

}  // namespace

Dataset load_cifar10_binary(const std::string& path) { return load_cifar10_binary(std::vector<std::string>{path}); }

Dataset load_cifar10_binary(const std::vector<std::string>& paths) {
  std::vector<std::uint8_t> all;
  for (const auto& path : paths) {
    auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
      const std::size_t bad_offset = bytes.size() - bytes.size() % kCifarRecordBytes;
      throw FormatError(path + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                        std::to_string(kCifarRecordBytes) + "; partial record at byte offset " +
                        std::to_string(bad_offset));
    }
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  const std::size_t n = all.size() / kCifarRecordBytes;
  Dataset d{Tensor(Shape{n, 3, 32, 32}), std::vector<std::size_t>(n), 10, "cifar10"};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * kCifarRecordBytes;
    d.labels[r] = all[base];
    if (d.labels[r] >= 10) {
      throw FormatError("record " + std::to_string(r) + " (byte offset " + std::to_string(base) + "): label " +
                        std::to_string(d.labels[r]) + " out of range");
    }
    auto row = d.samples.row(r);
    for (std::size_t k = 0; k < kCifarRecordBytes - 1; ++k) row[k] = all[base + 1 + k] / 255.0;
  }
  return d;
}

void save_cifar10_binary(const Dataset& data, const std::string& path) {
  if (data.samples.rank() != 4 || data.samples.shape() != Shape{data.size(), 3, 32, 32}) {
    throw FormatError("CIFAR-10 export needs samples of shape [N,3,32,32]");
  }
  std::vector<std::uint8_t> bytes;
  bytes.reserve(data.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < data.size(); ++r) {
    bytes.push_back(static_cast<std::uint8_t>(data.labels[r]));
    for (double v : data.samples.row(r)) bytes.push_back(to_byte(v));
  }
  write_file(path, bytes);
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 4) throw FormatError(images_path + ": too short for an IDX header");
  if (lab.size() < 4) throw FormatError(labels_path + ": too short for an IDX header");
  if (img[0] != 0 || img[1] != 0 || (img[2] != kIdxUByte && img[2] != kIdxFloat64) || img[3] == 0) {
    throw FormatError(images_path + ": bad IDX magic");
  }
  if (read_be32(lab, 0) != 0x00000801) throw FormatError(labels_path + ": bad IDX label magic (want 0x00000801)");

  const std::size_t rank = img[3];
  const std::size_t header = 4 + 4 * rank;
  if (img.size() < header) throw FormatError(images_path + ": truncated dimensions");
  Shape dims(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    dims[k] = read_be32(img, 4 + 4 * k);
    if (dims[k] == 0) throw FormatError(images_path + ": zero dimension");
  }
  const std::size_t elem = img[2] == kIdxUByte ? 1 : 8;
  if (img.size() != header + shape_size(dims) * elem) {
    throw FormatError(images_path + ": payload size does not match dimensions " + shape_string(dims));
  }
  if (lab.size() < 8) throw FormatError(labels_path + ": truncated label count");
  const std::size_t n = read_be32(lab, 4);
  if (lab.size() != 8 + n) throw FormatError(labels_path + ": payload size does not match label count");
  if (n != dims[0]) {
    throw FormatError("image count " + std::to_string(dims[0]) + " does not match label count " + std::to_string(n));
  }

  Shape shape = dims;
  if (rank == 3) shape = {dims[0], 1, dims[1], dims[2]};
  if (rank == 1) shape = {dims[0], 1};
  Dataset d{Tensor(shape), std::vector<std::size_t>(n), 0, "idx"};
  auto out = d.samples.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (elem == 1) {
      out[i] = img[header + i] / 255.0;
    } else {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) bits = (bits << 8) | img[header + 8 * i + b];
      out[i] = std::bit_cast<double>(bits);
    }
  }
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = n ? max_label + 1 : 0;
  return d;
}

void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path, bool as_bytes) {
  data.validate();
  Shape dims = data.samples.shape();
  if (dims.size() == 4 && dims[1] == 1) dims = {dims[0], dims[2], dims[3]};
  if (dims.size() > 255) throw FormatError("IDX supports at most 255 dimensions");
  std::vector<std::uint8_t> img{0, 0, as_bytes ? kIdxUByte : kIdxFloat64, static_cast<std::uint8_t>(dims.size())};
  for (auto d : dims) put_be32(img, static_cast<std::uint32_t>(d));
  for (double v : data.samples.data()) {
    if (as_bytes) {
      img.push_back(to_byte(v));
    } else {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int s = 56; s >= 0; s -= 8) img.push_back(static_cast<std::uint8_t>((bits >> s) & 0xFF));
    }
  }
  std::vector<std::uint8_t> lab;
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (auto y : data.labels) {
    if (y > 255) throw FormatError("IDX labels are single bytes");
    lab.push_back(static_cast<std::uint8_t>(y));
  }
  write_file(images_path, img);
  write_file(labels_path, lab);
}

Dataset synth_blobs(const BlobsOptions& o) {
  if (o.classes < 2) throw std::invalid_argument("synth_blobs: need at least 2 classes");
  if (o.dim < 2) throw std::invalid_argument("synth_blobs: need dim >= 2");
  if (o.per_class < 1) throw std::invalid_argument("synth_blobs: need per_class >= 1");
  if (!(o.spread >= 0.0)) throw std::invalid_argument("synth_blobs: spread must be non-negative");
  Rng rng = derive_rng(o.seed, {stream::data});
  std::normal_distribution<double> normal(0.0, 1.0);

  constexpr std::size_t kMaxRejections = 10000;
  std::vector<std::vector<double>> centers;
  std::size_t rejections = 0;
  while (centers.size() < o.classes) {
    std::vector<double> c(o.dim);
    double norm = 0.0;
    for (auto& v : c) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v /= norm;
    const bool ok = std::all_of(centers.begin(), centers.end(), [&](const std::vector<double>& other) {
      double d = 0.0;
      for (std::size_t k = 0; k < o.dim; ++k) d += (c[k] - other[k]) * (c[k] - other[k]);
      return std::sqrt(d) >= 2.0 * o.spread;
    });
    if (ok) {
      centers.push_back(std::move(c));
    } else if (++rejections >= kMaxRejections) {
      throw std::runtime_error("synth_blobs: could not place " + std::to_string(o.classes) +
                               " centers after 10000 rejections; use a smaller spread");
    }
  }

  const std::size_t n = o.classes * o.per_class;
  Dataset d{Tensor(Shape{n, o.dim}), std::vector<std::size_t>(n), o.classes, "synth_blobs"};
  for (std::size_t c = 0; c < o.classes; ++c) {
    for (std::size_t i = 0; i < o.per_class; ++i) {
      const std::size_t r = c * o.per_class + i;
      auto row = d.samples.row(r);
      for (std::size_t k = 0; k < o.dim; ++k) row[k] = centers[c][k] + o.spread * normal(rng);
      d.labels[r] = c;
    }
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must lie in (0,1)");
  data.validate();
  Rng rng = derive_rng(seed, {stream::data, 1});
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < data.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == c) members.push_back(i);
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(members[i - 1], members[pick(rng)]);
    }
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    test_idx.insert(test_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  if (train_idx.empty() || test_idx.empty()) throw std::invalid_argument("split leaves an empty partition");
  auto make = [&](const std::vector<std::size_t>& idx, const char* tag) {
    return Dataset{data.gather(idx), data.gather_labels(idx), data.num_classes, data.split + ":" + tag};
  };
  return {make(train_idx, "train"), make(test_idx, "test")};
}

Standardizer Standardizer::fit(const Dataset& reference) {
  const Tensor& x = reference.samples;
  const std::size_t n = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.row_size() / channels;
  Standardizer s{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
  const double count = static_cast<double>(n * spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < spatial; ++k) {
        const double v = x[(i * channels + c) * spatial + k];
        sum += v;
        sq += v * v;
      }
    s.mean[c] = sum / count;
    s.stddev[c] = std::sqrt(std::max(sq / count - s.mean[c] * s.mean[c], 0.0));
    if (s.stddev[c] == 0.0) s.stddev[c] = 1.0;
  }
  return s;
}

void Standardizer::apply(Dataset& data) const {
  Tensor& x = data.samples;
  const std::size_t n = x.dim(0), channels = x.dim(1);
  if (channels != mean.size()) throw std::invalid_argument("standardizer channel count mismatch");
  const std::size_t spatial = x.row_size() / channels;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < spatial; ++k) {
        double& v = x[(i * channels + c) * spatial + k];
        v = (v - mean[c]) / stddev[c];
      }
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (size < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, {stream::shuffle, epoch});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += size) {
    const std::size_t end = std::min(n, start + size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace distill
