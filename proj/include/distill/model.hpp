#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "distill/autodiff.hpp"
#include "distill/random.hpp"

namespace distill {

enum class LayerKind { conv2d, maxpool2x2, relu, linear, batchnorm2d, dropout, softmax, flatten };

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t channels = 0;  // conv2d output channels
  std::size_t kernel_h = 3;  // convy
  std::size_t kernel_w = 3;  // convx
  std::size_t padding = 0;
  std::size_t units = 0;  // linear outputs
  double rate = 0.5;      // dropout
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t padding);
  static LayerSpec dense(std::size_t units);
  static LayerSpec pool() { return LayerSpec{LayerKind::maxpool2x2}; }
  static LayerSpec activation() { return LayerSpec{LayerKind::relu}; }
  static LayerSpec batchnorm() { return LayerSpec{LayerKind::batchnorm2d}; }
  static LayerSpec drop(double rate);
  static LayerSpec flat() { return LayerSpec{LayerKind::flatten}; }
};

/// Raised when a ModelSpec does not chain; the message names the layer.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  // per sample: {C, H, W} or {F}
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  /// Per-sample output shape of every layer. Throws ModelError on the first
  /// layer that cannot accept its input.
  std::vector<Shape> infer_shapes() const;
  void validate() const { (void)infer_shapes(); }
};

/// Exact trainable parameter count (batchnorm contributes 2C; running stats excluded).
std::uint64_t count_params(const ModelSpec& spec);

// Presets.
ModelSpec table1_student();
ModelSpec table1_teacher(double dropout_rate = 0.5);
ModelSpec vgg11(std::size_t input_size = 64, std::size_t num_classes = 200);
ModelSpec vgg19_bn(std::size_t input_size = 64, std::size_t num_classes = 200);
ModelSpec mlp(std::size_t input_width, const std::vector<std::size_t>& hidden, std::size_t num_classes,
              double dropout_rate = 0.0);
std::optional<ModelSpec> preset(std::string_view name);

struct ParamEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
  bool decay = false;  // weight decay applies (conv/linear weights only)
};

/// Named parameter tensors in construction order.
class ParamStore {
 public:
  std::size_t add(ParamEntry entry);
  std::size_t size() const { return entries_.size(); }
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::optional<std::size_t> find(std::string_view name) const;

  std::uint64_t trainable_count() const;

  /// Flat binary checkpoint ("DKPT", version, count, then tensors).
  void write_checkpoint(std::ostream& os) const;
  std::vector<std::uint8_t> checkpoint_bytes() const;
  void save(const std::string& path) const;
  /// Replaces values by name; every stored tensor must exist with the same shape.
  void read_checkpoint(std::istream& is);
  void load(const std::string& path);

 private:
  std::vector<ParamEntry> entries_;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// 64-bit FNV-1a over a byte buffer.
std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes);

enum class Mode { training, inference };

/// Parameters of a model placed on a tape, one Var per ParamStore entry.
struct Binding {
  std::vector<Var> vars;
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Places parameters on the tape: trainable ones as leaves when `trainable`,
  /// everything else as constants.
  Binding bind(Tape& tape, bool trainable) const;

  /// Forward pass over a batch [N, input_shape...] producing logits [N, K].
  /// Training mode uses batch statistics and updates the running statistics.
  Var forward(Tape& tape, const Binding& binding, Var batch, Mode mode, Rng& rng);
  /// Inference-mode forward that leaves the model untouched.
  Var forward(Tape& tape, const Binding& binding, Var batch) const;

  /// Inference-mode logits for a batch without gradient tracking.
  Tensor predict(const Tensor& batch) const;

 private:
  Var run(Tape& tape, const Binding& binding, Var batch, Mode mode, Rng* rng, ParamStore* stats_sink) const;

  struct LayerParams {
    std::size_t weight = 0, bias = 0;  // conv/linear; gamma/beta for batchnorm
    std::size_t running_mean = 0, running_var = 0;
  };

  ModelSpec spec_;
  std::vector<Shape> shapes_;
  ParamStore params_;
  std::vector<LayerParams> layer_params_;
};

}  // namespace distill
