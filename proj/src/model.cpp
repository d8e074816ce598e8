#include "distill/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "distill/layers.hpp"

namespace distill {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 8> kLayerNames{{
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::maxpool2x2, "maxpool2x2"},
    {LayerKind::relu, "relu"},
    {LayerKind::linear, "linear"},
    {LayerKind::batchnorm2d, "batchnorm2d"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::softmax, "softmax"},
    {LayerKind::flatten, "flatten"},
}};

std::string layer_label(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) + ")";
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kLayerNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kLayerNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kernel, std::size_t padding) {
  LayerSpec l{LayerKind::conv2d};
  l.channels = channels;
  l.kernel_h = l.kernel_w = kernel;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec l{LayerKind::linear};
  l.units = units;
  return l;
}

LayerSpec LayerSpec::drop(double rate) {
  LayerSpec l{LayerKind::dropout};
  l.rate = rate;
  return l;
}

std::vector<Shape> ModelSpec::infer_shapes() const {
  if (input_shape.empty() || input_shape.size() == 2 || input_shape.size() > 3) {
    throw ModelError("input shape must be {C,H,W} or {F}, got " + shape_string(input_shape));
  }
  for (auto e : input_shape) {
    if (e == 0) throw ModelError("input shape has a zero extent: " + shape_string(input_shape));
  }
  std::vector<Shape> shapes;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    auto fail = [&](const std::string& why) {
      throw ModelError(layer_label(i, l) + ": " + why + " (input " + shape_string(cur) + ")");
    };
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (cur.size() != 3) fail("expects a {C,H,W} input");
        if (l.channels < 1) fail("channels must be >= 1");
        if (l.kernel_h < 1 || l.kernel_w < 1) fail("filter size must be >= 1 in both axes");
        if (cur[1] + 2 * l.padding < l.kernel_h || cur[2] + 2 * l.padding < l.kernel_w) {
          fail("filter larger than padded input");
        }
        cur = {l.channels, cur[1] + 2 * l.padding - l.kernel_h + 1, cur[2] + 2 * l.padding - l.kernel_w + 1};
        break;
      }
      case LayerKind::maxpool2x2:
        if (cur.size() != 3) fail("expects a {C,H,W} input");
        if (cur[1] < 2 || cur[2] < 2) fail("needs H and W >= 2");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::linear:
        if (cur.size() != 1) fail("expects a flat input; insert a flatten layer");
        if (l.units < 1) fail("units must be >= 1");
        cur = {l.units};
        break;
      case LayerKind::batchnorm2d:
        if (cur.size() != 3 && cur.size() != 1) fail("expects {C,H,W} or {C}");
        if (!(l.bn_eps > 0.0)) fail("eps must be positive");
        if (!(l.bn_momentum >= 0.0 && l.bn_momentum <= 1.0)) fail("momentum must lie in [0,1]");
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) fail("dropout rate must lie in [0,1)");
        break;
      case LayerKind::softmax:
        if (cur.size() != 1) fail("expects a flat input");
        break;
      case LayerKind::flatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::relu:
        break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != num_classes) {
    throw ModelError("model output " + shape_string(cur) + " does not match class count " +
                     std::to_string(num_classes));
  }
  return shapes;
}

std::uint64_t count_params(const ModelSpec& spec) {
  const auto shapes = spec.infer_shapes();
  std::uint64_t total = 0;
  Shape in = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d:
        total += static_cast<std::uint64_t>(l.channels) * in[0] * l.kernel_h * l.kernel_w + l.channels;
        break;
      case LayerKind::linear:
        total += static_cast<std::uint64_t>(l.units) * in[0] + l.units;
        break;
      case LayerKind::batchnorm2d:
        total += 2ULL * in[0];
        break;
      default:
        break;
    }
    in = shapes[i];
  }
  return total;
}

// ---- presets ---------------------------------------------------------------

ModelSpec table1_student() {
  ModelSpec s{"table1_student", {3, 32, 32}, 10, {}};
  for (std::size_t ch : {32, 32, 64}) {
    s.layers.push_back(LayerSpec::conv(ch, 3, 1));
    s.layers.push_back(LayerSpec::activation());
    s.layers.push_back(LayerSpec::pool());
  }
  s.layers.push_back(LayerSpec::flat());
  s.layers.push_back(LayerSpec::dense(128));
  s.layers.push_back(LayerSpec::activation());
  s.layers.push_back(LayerSpec::dense(10));
  return s;
}

ModelSpec table1_teacher(double dropout_rate) {
  ModelSpec s{"table1_teacher", {3, 32, 32}, 10, {}};
  auto block = [&](std::size_t ch, bool pool) {
    s.layers.push_back(LayerSpec::conv(ch, 3, 1));
    s.layers.push_back(LayerSpec::batchnorm());
    s.layers.push_back(LayerSpec::activation());
    if (pool) s.layers.push_back(LayerSpec::pool());
  };
  block(32, true);
  block(32, true);
  block(64, false);
  block(64, false);
  block(128, true);
  s.layers.push_back(LayerSpec::flat());
  s.layers.push_back(LayerSpec::dense(512));
  s.layers.push_back(LayerSpec::activation());
  s.layers.push_back(LayerSpec::drop(dropout_rate));
  s.layers.push_back(LayerSpec::dense(128));
  s.layers.push_back(LayerSpec::activation());
  s.layers.push_back(LayerSpec::drop(dropout_rate));
  s.layers.push_back(LayerSpec::dense(10));
  return s;
}

namespace {

// 0 marks a 2x2 max pool.
ModelSpec vgg(std::string name, const std::vector<std::size_t>& cfg, bool batchnorm, std::size_t input_size,
              std::size_t num_classes) {
  ModelSpec s{std::move(name), {3, input_size, input_size}, num_classes, {}};
  for (auto c : cfg) {
    if (c == 0) {
      s.layers.push_back(LayerSpec::pool());
      continue;
    }
    s.layers.push_back(LayerSpec::conv(c, 3, 1));
    if (batchnorm) s.layers.push_back(LayerSpec::batchnorm());
    s.layers.push_back(LayerSpec::activation());
  }
  s.layers.push_back(LayerSpec::flat());
  s.layers.push_back(LayerSpec::dense(4096));
  s.layers.push_back(LayerSpec::activation());
  s.layers.push_back(LayerSpec::drop(0.5));
  s.layers.push_back(LayerSpec::dense(4096));
  s.layers.push_back(LayerSpec::activation());
  s.layers.push_back(LayerSpec::drop(0.5));
  s.layers.push_back(LayerSpec::dense(num_classes));
  return s;
}

}  // namespace

ModelSpec vgg11(std::size_t input_size, std::size_t num_classes) {
  return vgg("vgg11", {64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0}, false, input_size, num_classes);
}

ModelSpec vgg19_bn(std::size_t input_size, std::size_t num_classes) {
  return vgg("vgg19_bn",
             {64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0}, true,
             input_size, num_classes);
}

ModelSpec mlp(std::size_t input_width, const std::vector<std::size_t>& hidden, std::size_t num_classes,
              double dropout_rate) {
  ModelSpec s{"mlp", {input_width}, num_classes, {}};
  for (auto h : hidden) {
    s.layers.push_back(LayerSpec::dense(h));
    s.layers.push_back(LayerSpec::activation());
    if (dropout_rate > 0.0) s.layers.push_back(LayerSpec::drop(dropout_rate));
  }
  s.layers.push_back(LayerSpec::dense(num_classes));
  return s;
}

std::optional<ModelSpec> preset(std::string_view name) {
  if (name == "table1_student") return table1_student();
  if (name == "table1_teacher") return table1_teacher();
  if (name == "vgg11") return vgg11();
  if (name == "vgg19_bn") return vgg19_bn();
  return std::nullopt;
}

// ---- parameter store -------------------------------------------------------

std::size_t ParamStore::add(ParamEntry entry) {
  if (find(entry.name)) throw std::invalid_argument("duplicate parameter name " + entry.name);
  entries_.push_back(std::move(entry));
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

std::uint64_t ParamStore::trainable_count() const {
  std::uint64_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw CheckpointError("checkpoint truncated");
    u |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(u);
}

}  // namespace

void ParamStore::write_checkpoint(std::ostream& os) const {
  os.write("DKPT", 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.value.rank()));
    for (auto extent : e.value.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(extent));
    for (double v : e.value.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
}

std::vector<std::uint8_t> ParamStore::checkpoint_bytes() const {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  write_checkpoint(os);
  if (!os) throw CheckpointError("failed writing " + path);
}

void ParamStore::read_checkpoint(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "DKPT") throw CheckpointError("not a DKPT checkpoint");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(is);
  if (count != entries_.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(entries_.size()));
  }
  std::vector<Tensor> loaded(entries_.size());
  std::vector<bool> seen(entries_.size(), false);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = get_le<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw CheckpointError("checkpoint truncated in tensor name");
    const auto idx = find(name);
    if (!idx || seen[*idx]) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
    const auto rank = get_le<std::uint8_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = get_le<std::uint32_t>(is);
    if (shape != entries_[*idx].value.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                            shape_string(entries_[*idx].value.shape()));
    }
    Tensor value(shape);
    for (auto& v : value.data()) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    loaded[*idx] = std::move(value);
    seen[*idx] = true;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].value = std::move(loaded[i]);
}

void ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  read_checkpoint(is);
}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- model -----------------------------------------------------------------

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  shapes_ = spec_.infer_shapes();
  Rng rng = derive_rng(init_seed, {stream::init});
  auto glorot = [&rng](Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
  };

  Shape in = spec_.input_shape;
  layer_params_.resize(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string prefix = std::to_string(i) + "." + std::string(to_string(l.kind)) + ".";
    LayerParams& lp = layer_params_[i];
    switch (l.kind) {
      case LayerKind::conv2d: {
        const std::size_t area = l.kernel_h * l.kernel_w;
        lp.weight = params_.add({prefix + "weight",
                                 glorot({l.channels, in[0], l.kernel_h, l.kernel_w}, in[0] * area, l.channels * area),
                                 true, true});
        lp.bias = params_.add({prefix + "bias", Tensor(Shape{l.channels}), true, false});
        break;
      }
      case LayerKind::linear:
        lp.weight = params_.add({prefix + "weight", glorot({l.units, in[0]}, in[0], l.units), true, true});
        lp.bias = params_.add({prefix + "bias", Tensor(Shape{l.units}), true, false});
        break;
      case LayerKind::batchnorm2d:
        lp.weight = params_.add({prefix + "gamma", Tensor(Shape{in[0]}, 1.0), true, false});
        lp.bias = params_.add({prefix + "beta", Tensor(Shape{in[0]}), true, false});
        lp.running_mean = params_.add({prefix + "running_mean", Tensor(Shape{in[0]}), false, false});
        lp.running_var = params_.add({prefix + "running_var", Tensor(Shape{in[0]}, 1.0), false, false});
        break;
      default:
        break;
    }
    in = shapes_[i];
  }
}

Binding Model::bind(Tape& tape, bool trainable) const {
  Binding b;
  b.vars.reserve(params_.size());
  for (const auto& e : params_.entries()) {
    b.vars.push_back(trainable && e.trainable ? tape.leaf(e.value) : tape.constant(e.value));
  }
  return b;
}

Var Model::forward(Tape& tape, const Binding& binding, Var batch, Mode mode, Rng& rng) {
  return run(tape, binding, batch, mode, &rng, mode == Mode::training ? &params_ : nullptr);
}

Var Model::forward(Tape& tape, const Binding& binding, Var batch) const {
  return run(tape, binding, batch, Mode::inference, nullptr, nullptr);
}

Tensor Model::predict(const Tensor& batch) const {
  Tape tape;
  const Binding b = bind(tape, false);
  return forward(tape, b, tape.constant(batch)).value();
}

Var Model::run(Tape&, const Binding& binding, Var batch, Mode mode, Rng* rng, ParamStore* stats_sink) const {
  const Shape& bs = batch.value().shape();
  if (bs.size() != spec_.input_shape.size() + 1 || !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(),
                                                               bs.begin() + 1)) {
    throw ModelError(spec_.name + ": batch shape " + shape_string(bs) + " does not match input shape " +
                     shape_string(spec_.input_shape));
  }
  if (binding.vars.size() != params_.size()) throw ModelError(spec_.name + ": binding does not match parameters");
  const bool training = mode == Mode::training;
  const std::size_t n = bs[0];
  Var cur = batch;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const LayerParams& lp = layer_params_[i];
    try {
      switch (l.kind) {
        case LayerKind::conv2d:
          cur = conv2d(cur, binding.vars[lp.weight], binding.vars[lp.bias], l.padding);
          break;
        case LayerKind::maxpool2x2:
          cur = maxpool2x2(cur);
          break;
        case LayerKind::relu:
          cur = relu(cur);
          break;
        case LayerKind::linear:
          cur = linear(cur, binding.vars[lp.weight], binding.vars[lp.bias]);
          break;
        case LayerKind::batchnorm2d:
          if (training) {
            ChannelStats stats;
            cur = batchnorm_train(cur, binding.vars[lp.weight], binding.vars[lp.bias], l.bn_eps, &stats);
            if (stats_sink) {
              Tensor& rm = (*stats_sink)[lp.running_mean].value;
              Tensor& rv = (*stats_sink)[lp.running_var].value;
              const double m = l.bn_momentum;
              const double unbias = static_cast<double>(stats.count) / static_cast<double>(stats.count - 1);
              for (std::size_t c = 0; c < rm.size(); ++c) {
                rm[c] = (1.0 - m) * rm[c] + m * stats.mean[c];
                rv[c] = (1.0 - m) * rv[c] + m * stats.variance[c] * unbias;
              }
            }
          } else {
            cur = batchnorm_infer(cur, binding.vars[lp.weight], binding.vars[lp.bias], params_[lp.running_mean].value,
                                  params_[lp.running_var].value, l.bn_eps);
          }
          break;
        case LayerKind::dropout:
          if (training) {
            if (!rng) throw ModelError("training-mode dropout needs an rng");
            cur = dropout(cur, l.rate, true, *rng);
          }
          break;
        case LayerKind::softmax:
          cur = softmax_rows(cur);
          break;
        case LayerKind::flatten:
          cur = reshape(cur, Shape{n, shape_size(shapes_[i])});
          break;
      }
    } catch (const ShapeError& e) {
      throw ModelError(spec_.name + " " + layer_label(i, l) + ": " + e.what());
    }
  }
  return cur;
}

}  // namespace distill
