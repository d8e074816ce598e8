#include "distill/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace distill {

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error([&] {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        return msg;
      }()),
      errors_(std::move(errors)) {}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Collects every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  void error(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  bool expect_map(const YAML::Node& n, const std::string& path) {
    if (n.IsMap()) return true;
    error(path, "expected a mapping");
    return false;
  }

  void allow_keys(const YAML::Node& n, const std::string& path, std::initializer_list<std::string_view> allowed) {
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) error(join(path, key), "unknown key");
    }
  }

  template <class T>
  bool get(const YAML::Node& map, const char* key, const std::string& path, T& out) {
    const YAML::Node n = map[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    const std::string p = join(path, key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        const auto v = n.as<long long>();
        if (v < 0) {
          error(p, "must be a non-negative integer");
          return false;
        }
        out = static_cast<T>(v);
      } else if constexpr (std::is_same_v<T, double>) {
        const double v = n.as<double>();
        if (!std::isfinite(v)) {
          error(p, "must be finite");
          return false;
        }
        out = v;
      } else {
        out = n.as<T>();
      }
      return true;
    } catch (const YAML::Exception&) {
      error(p, std::string("expected ") + type_name<T>());
      return false;
    }
  }

  template <class T>
  bool get_list(const YAML::Node& map, const char* key, const std::string& path, std::vector<T>& out) {
    const YAML::Node n = map[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    const std::string p = join(path, key);
    if (!n.IsSequence()) {
      error(p, "expected a list");
      return false;
    }
    std::vector<T> values;
    bool ok = true;
    for (std::size_t i = 0; i < n.size(); ++i) {
      try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
          const auto v = n[i].as<long long>();
          if (v < 0) throw YAML::Exception(YAML::Mark::null_mark(), "negative");
          values.push_back(static_cast<T>(v));
        } else {
          values.push_back(n[i].as<T>());
        }
      } catch (const YAML::Exception&) {
        error(p + "[" + std::to_string(i) + "]", std::string("expected ") + type_name<T>());
        ok = false;
      }
    }
    if (ok) out = std::move(values);
    return ok;
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, double>) return "a number";
    if constexpr (std::is_same_v<T, bool>) return "true or false";
    if constexpr (std::is_same_v<T, std::string>) return "a string";
    return "a non-negative integer";
  }
};

void parse_training(Reader& r, const YAML::Node& n, const std::string& path, TrainingSection& t) {
  if (!r.expect_map(n, path)) return;
  r.allow_keys(n, path, {"preset", "lr", "momentum", "weight_decay", "schedule", "epochs", "batch_size"});
  std::string preset;
  if (r.get(n, "preset", path, preset)) {
    if (preset == "cifar") {
      t.optim = OptimConfig::cifar();
      t.epochs = 300;
    } else if (preset == "tiny_imagenet") {
      t.optim = OptimConfig::tiny_imagenet();
    } else {
      r.error(join(path, "preset"), "unknown optimizer preset '" + preset + "' (cifar, tiny_imagenet)");
    }
  }
  r.get(n, "lr", path, t.optim.lr);
  r.get(n, "momentum", path, t.optim.momentum);
  r.get(n, "weight_decay", path, t.optim.weight_decay);
  r.get(n, "epochs", path, t.epochs);
  r.get(n, "batch_size", path, t.batch_size);
  const YAML::Node s = n["schedule"];
  const std::string sp = join(path, "schedule");
  if (s.IsDefined() && !s.IsNull()) {
    if (s.IsScalar() && s.as<std::string>() == "none") {
      t.optim.schedule.reset();
    } else if (s.IsMap()) {
      r.allow_keys(s, sp, {"factor", "period"});
      StepDecay d = t.optim.schedule.value_or(StepDecay{});
      r.get(s, "factor", sp, d.factor);
      r.get(s, "period", sp, d.period);
      t.optim.schedule = d;
    } else {
      r.error(sp, "expected 'none' or {factor, period}");
    }
  }
  if (!(t.optim.lr > 0.0)) r.error(join(path, "lr"), "must be > 0");
  if (!(t.optim.momentum >= 0.0 && t.optim.momentum < 1.0)) r.error(join(path, "momentum"), "must lie in [0, 1)");
  if (!(t.optim.weight_decay >= 0.0)) r.error(join(path, "weight_decay"), "must be >= 0");
  if (t.optim.schedule) {
    if (!(t.optim.schedule->factor > 0.0)) r.error(join(sp, "factor"), "must be > 0");
    if (t.optim.schedule->period < 1) r.error(join(sp, "period"), "must be >= 1");
  }
  if (t.batch_size < 1) r.error(join(path, "batch_size"), "must be >= 1");
}

std::optional<LayerSpec> parse_layer(Reader& r, const YAML::Node& n, const std::string& path) {
  if (!r.expect_map(n, path)) return std::nullopt;
  std::string type;
  if (!r.get(n, "type", path, type)) {
    r.error(join(path, "type"), "required");
    return std::nullopt;
  }
  const auto kind = parse_layer_kind(type);
  if (!kind) {
    r.error(join(path, "type"), "unknown layer type '" + type + "'");
    return std::nullopt;
  }
  LayerSpec l;
  l.kind = *kind;
  switch (*kind) {
    case LayerKind::conv2d: {
      r.allow_keys(n, path, {"type", "channels", "kernel", "padding"});
      if (!r.get(n, "channels", path, l.channels)) r.error(join(path, "channels"), "required");
      const YAML::Node k = n["kernel"];
      if (k.IsDefined() && k.IsSequence()) {
        std::vector<std::size_t> hw;
        if (r.get_list(n, "kernel", path, hw)) {
          if (hw.size() != 2) {
            r.error(join(path, "kernel"), "expected [height, width]");
          } else {
            l.kernel_h = hw[0];
            l.kernel_w = hw[1];
          }
        }
      } else if (r.get(n, "kernel", path, l.kernel_h)) {
        l.kernel_w = l.kernel_h;
      }
      r.get(n, "padding", path, l.padding);
      break;
    }
    case LayerKind::linear:
      r.allow_keys(n, path, {"type", "units"});
      if (!r.get(n, "units", path, l.units)) r.error(join(path, "units"), "required");
      break;
    case LayerKind::batchnorm2d:
      r.allow_keys(n, path, {"type", "eps", "momentum"});
      r.get(n, "eps", path, l.bn_eps);
      r.get(n, "momentum", path, l.bn_momentum);
      if (!(l.bn_eps > 0.0)) r.error(join(path, "eps"), "must be > 0");
      if (!(l.bn_momentum >= 0.0 && l.bn_momentum <= 1.0)) r.error(join(path, "momentum"), "must lie in [0, 1]");
      break;
    case LayerKind::dropout:
      r.allow_keys(n, path, {"type", "rate"});
      r.get(n, "rate", path, l.rate);
      if (!(l.rate >= 0.0 && l.rate < 1.0)) r.error(join(path, "rate"), "must lie in [0, 1)");
      break;
    default:
      r.allow_keys(n, path, {"type"});
  }
  return l;
}

std::optional<ModelSpec> parse_model_spec(Reader& r, const YAML::Node& n, const std::string& path,
                                          std::initializer_list<std::string_view> extra_keys = {}) {
  if (!r.expect_map(n, path)) return std::nullopt;
  std::vector<std::string_view> allowed{"preset", "name",    "input_shape", "num_classes", "layers",
                                        "dropout", "hidden", "input_size",  "input_width"};
  allowed.insert(allowed.end(), extra_keys.begin(), extra_keys.end());
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) r.error(join(path, key), "unknown key");
  }
  const std::size_t before = r.errors.size();
  ModelSpec spec;
  std::string preset;
  if (r.get(n, "preset", path, preset)) {
    double dropout = preset == "table1_teacher" ? 0.5 : 0.0;
    r.get(n, "dropout", path, dropout);
    if (!(dropout >= 0.0 && dropout < 1.0)) r.error(join(path, "dropout"), "must lie in [0, 1)");
    std::size_t classes = 0;
    const bool has_classes = r.get(n, "num_classes", path, classes);
    if (preset == "table1_student") {
      spec = table1_student();
    } else if (preset == "table1_teacher") {
      spec = table1_teacher(dropout);
    } else if (preset == "vgg11" || preset == "vgg19_bn") {
      std::size_t size = 64;
      r.get(n, "input_size", path, size);
      if (!has_classes) classes = 200;
      spec = preset == "vgg11" ? vgg11(size, classes) : vgg19_bn(size, classes);
    } else if (preset == "mlp") {
      std::size_t width = 0;
      std::vector<std::size_t> hidden;
      if (!r.get(n, "input_width", path, width)) r.error(join(path, "input_width"), "required for the mlp preset");
      r.get_list(n, "hidden", path, hidden);
      if (!has_classes) r.error(join(path, "num_classes"), "required for the mlp preset");
      spec = mlp(width, hidden, classes, dropout);
    } else {
      r.error(join(path, "preset"),
              "unknown model preset '" + preset + "' (table1_student, table1_teacher, vgg11, vgg19_bn, mlp)");
      return std::nullopt;
    }
    r.get(n, "name", path, spec.name);
  } else {
    spec.name = "model";
    r.get(n, "name", path, spec.name);
    std::vector<std::size_t> shape;
    if (!r.get_list(n, "input_shape", path, shape)) r.error(join(path, "input_shape"), "required");
    spec.input_shape = shape;
    if (!r.get(n, "num_classes", path, spec.num_classes)) r.error(join(path, "num_classes"), "required");
    const YAML::Node layers = n["layers"];
    if (!layers.IsDefined() || !layers.IsSequence() || layers.size() == 0) {
      r.error(join(path, "layers"), "expected a non-empty list of layers");
    } else {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (auto l = parse_layer(r, layers[i], join(path, "layers") + "[" + std::to_string(i) + "]")) {
          spec.layers.push_back(*l);
        }
      }
    }
  }
  if (r.errors.size() != before) return std::nullopt;
  try {
    spec.validate();
  } catch (const std::exception& e) {
    r.error(path, e.what());
    return std::nullopt;
  }
  return spec;
}

void parse_model_section(Reader& r, const YAML::Node& n, const std::string& path, const TrainingSection& defaults,
                         std::optional<ModelSection>& out) {
  if (!r.expect_map(n, path)) return;
  ModelSection section;
  r.get(n, "checkpoint", path, section.checkpoint);
  const YAML::Node t = n["optimizer"];
  if (t.IsDefined() && !t.IsNull()) {
    section.training = defaults;
    parse_training(r, t, join(path, "optimizer"), *section.training);
  }
  if (auto spec = parse_model_spec(r, n, path, {"checkpoint", "optimizer"})) {
    section.spec = std::move(*spec);
    out = std::move(section);
  }
}

bool file_exists(const std::string& p) {
  std::error_code ec;
  return std::filesystem::is_regular_file(p, ec);
}

void parse_dataset(Reader& r, const YAML::Node& n, DatasetConfig& d, bool check_files) {
  const std::string path = "dataset";
  if (!r.expect_map(n, path)) return;
  r.allow_keys(n, path,
               {"kind", "classes", "per_class", "dim", "spread", "seed", "test_fraction", "train_files", "test_files",
                "train_images", "train_labels", "test_images", "test_labels", "standardize"});
  std::string kind = "synth_blobs";
  r.get(n, "kind", path, kind);
  r.get(n, "standardize", path, d.standardize);
  if (kind == "synth_blobs") {
    d.kind = DatasetKind::synth_blobs;
    r.get(n, "classes", path, d.blobs.classes);
    r.get(n, "per_class", path, d.blobs.per_class);
    r.get(n, "dim", path, d.blobs.dim);
    r.get(n, "spread", path, d.blobs.spread);
    std::uint64_t seed = 0;
    if (r.get(n, "seed", path, seed)) d.blobs_seed = seed;
    r.get(n, "test_fraction", path, d.test_fraction);
    if (d.blobs.classes < 2) r.error(join(path, "classes"), "must be >= 2");
    if (d.blobs.dim < 2) r.error(join(path, "dim"), "must be >= 2");
    if (d.blobs.per_class < 2) r.error(join(path, "per_class"), "must be >= 2");
    if (!(d.blobs.spread >= 0.0)) r.error(join(path, "spread"), "must be >= 0");
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) r.error(join(path, "test_fraction"), "must lie in (0, 1)");
  } else if (kind == "cifar10") {
    d.kind = DatasetKind::cifar10;
    if (!r.get_list(n, "train_files", path, d.train_files) || d.train_files.empty()) {
      r.error(join(path, "train_files"), "required");
    }
    if (!r.get_list(n, "test_files", path, d.test_files) || d.test_files.empty()) {
      r.error(join(path, "test_files"), "required");
    }
    for (std::size_t i = 0; i < d.train_files.size(); ++i) {
      if (check_files && !file_exists(d.train_files[i])) {
        r.error("dataset.train_files[" + std::to_string(i) + "]", "no such file: " + d.train_files[i]);
      }
    }
    for (std::size_t i = 0; i < d.test_files.size(); ++i) {
      if (check_files && !file_exists(d.test_files[i])) {
        r.error("dataset.test_files[" + std::to_string(i) + "]", "no such file: " + d.test_files[i]);
      }
    }
  } else if (kind == "idx") {
    d.kind = DatasetKind::idx;
    for (auto [key, field] : {std::pair{"train_images", &d.train_images}, std::pair{"train_labels", &d.train_labels},
                              std::pair{"test_images", &d.test_images}, std::pair{"test_labels", &d.test_labels}}) {
      if (!r.get(n, key, path, *field)) {
        r.error(join(path, key), "required");
      } else if (check_files && !file_exists(*field)) {
        r.error(join(path, key), "no such file: " + *field);
      }
    }
  } else {
    r.error(join(path, "kind"), "unknown dataset kind '" + kind + "' (synth_blobs, cifar10, idx)");
  }
}

void parse_loss(Reader& r, const YAML::Node& n, LossSpec& loss) {
  const std::string path = "loss";
  if (!r.expect_map(n, path)) return;
  r.allow_keys(n, path, {"terms", "temperature", "margin", "hkd_t2_scaling", "psi_norm", "target_space"});
  const YAML::Node terms = n["terms"];
  const std::string tp = join(path, "terms");
  if (terms.IsDefined() && !terms.IsNull()) {
    if (!terms.IsMap()) {
      r.error(tp, "expected a mapping of term name to weight");
    } else {
      for (const auto& kv : terms) {
        const auto name = kv.first.as<std::string>();
        const auto kind = parse_soft_loss(name);
        if (!kind) {
          r.error(join(tp, name), "unknown loss term (bkd, hkd, rkd_d, rkd_a, triplet_kd or ours)");
          continue;
        }
        double w = 0.0;
        if (!r.get(terms, name.c_str(), tp, w)) continue;
        if (w < 0.0) {
          r.error(join(tp, name), "weight must be >= 0");
          continue;
        }
        for (const auto& t : loss.terms) {
          if (t.kind == *kind) r.error(join(tp, name), "term given twice");
        }
        loss.terms.push_back({*kind, w});
      }
    }
  }
  r.get(n, "temperature", path, loss.temperature);
  r.get(n, "margin", path, loss.margin);
  r.get(n, "hkd_t2_scaling", path, loss.hkd_t2_scaling);
  std::string s;
  if (r.get(n, "psi_norm", path, s)) {
    if (auto v = parse_psi_norm(s)) {
      loss.psi_norm = *v;
    } else {
      r.error(join(path, "psi_norm"), "expected sum or mean");
    }
  }
  if (r.get(n, "target_space", path, s)) {
    if (auto v = parse_target_space(s)) {
      loss.target_space = *v;
    } else {
      r.error(join(path, "target_space"), "expected logits or softmax");
    }
  }
  if (!(loss.temperature > 0.0)) r.error(join(path, "temperature"), "must be > 0");
  if (!(loss.margin >= 0.0)) r.error(join(path, "margin"), "must be >= 0");
}

void parse_sampling(Reader& r, const YAML::Node& n, SamplingConfig& s) {
  const std::string path = "sampling";
  if (!r.expect_map(n, path)) return;
  r.allow_keys(n, path, {"pairs", "triplets", "per_anchor", "strategy", "negative_by"});
  r.get(n, "pairs", path, s.pairs);
  r.get(n, "triplets", path, s.triplets);
  r.get(n, "per_anchor", path, s.negatives.per_anchor);
  std::string v;
  if (r.get(n, "strategy", path, v)) {
    if (auto st = parse_negative_strategy(v)) {
      s.negatives.strategy = *st;
    } else {
      r.error(join(path, "strategy"), "expected random or hardest");
    }
  }
  if (r.get(n, "negative_by", path, v)) {
    if (auto b = parse_negative_by(v)) {
      s.negatives.by = *b;
    } else {
      r.error(join(path, "negative_by"), "expected teacher_argmax or ground_truth");
    }
  }
  if (s.pairs < 1) r.error(join(path, "pairs"), "must be >= 1");
  if (s.triplets < 1) r.error(join(path, "triplets"), "must be >= 1");
  if (s.negatives.per_anchor < 1) r.error(join(path, "per_anchor"), "must be >= 1");
}

void parse_gradcheck(Reader& r, const YAML::Node& n, SuiteOptions& g) {
  const std::string path = "gradcheck";
  if (!r.expect_map(n, path)) return;
  r.allow_keys(n, path, {"seeds", "base_seed", "tolerance", "eps", "inject_fault"});
  r.get(n, "seeds", path, g.seeds);
  r.get(n, "base_seed", path, g.base_seed);
  r.get(n, "tolerance", path, g.tolerance);
  r.get(n, "eps", path, g.eps);
  r.get(n, "inject_fault", path, g.inject_fault);
  if (g.seeds < 1) r.error(join(path, "seeds"), "must be >= 1");
  if (!(g.tolerance > 0.0)) r.error(join(path, "tolerance"), "must be > 0");
  if (!(g.eps > 0.0)) r.error(join(path, "eps"), "must be > 0");
}

YAML::Node parse_yaml(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError({"syntax: " + std::string(e.what())});
  }
}

}  // namespace

std::string method_label(const LossSpec& loss) {
  std::vector<std::string> parts;
  if (loss.uses(SoftLoss::bkd)) parts.emplace_back("bkd");
  if (loss.uses(SoftLoss::hkd)) parts.emplace_back("hkd");
  if (loss.uses(SoftLoss::rkd_d) && loss.uses(SoftLoss::rkd_a)) {
    parts.emplace_back("rkd_da");
  } else if (loss.uses(SoftLoss::rkd_d)) {
    parts.emplace_back("rkd_d");
  } else if (loss.uses(SoftLoss::rkd_a)) {
    parts.emplace_back("rkd_a");
  }
  if (loss.uses(SoftLoss::triplet_kd)) parts.emplace_back("ours");
  if (parts.empty()) return "student";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

std::string ExperimentConfig::method() const { return name.empty() ? method_label(loss) : name; }

std::string expand_path(const std::string& pattern, std::uint64_t seed, const std::string& out_dir) {
  std::string s = pattern;
  for (auto [key, value] : {std::pair<std::string, std::string>{"{seed}", std::to_string(seed)}, {"{out}", out_dir}}) {
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
      s.replace(pos, key.size(), value);
    }
  }
  return s;
}

ExperimentConfig parse_config(const std::string& text, bool check_files) {
  const YAML::Node root = parse_yaml(text);
  ExperimentConfig cfg;
  if (root.IsNull()) return cfg;
  Reader r;
  if (!root.IsMap()) throw ConfigError({"(root): expected a mapping"});
  r.allow_keys(root, "",
               {"name", "dataset", "teacher", "student", "optimizer", "loss", "sampling", "seeds", "output_dir",
                "gradcheck"});
  r.get(root, "name", "", cfg.name);
  r.get(root, "output_dir", "", cfg.output_dir);
  if (root["seeds"].IsDefined()) {
    if (root["seeds"].IsScalar()) {
      std::uint64_t s = 0;
      if (r.get(root, "seeds", "", s)) cfg.seeds = {s};
    } else if (r.get_list(root, "seeds", "", cfg.seeds) && cfg.seeds.empty()) {
      r.error("seeds", "must list at least one seed");
    }
  }
  const bool has_dataset = root["dataset"].IsDefined();
  if (has_dataset) parse_dataset(r, root["dataset"], cfg.dataset, check_files);
  if (root["optimizer"].IsDefined()) parse_training(r, root["optimizer"], "optimizer", cfg.training);
  if (root["teacher"].IsDefined()) parse_model_section(r, root["teacher"], "teacher", cfg.training, cfg.teacher);
  if (root["student"].IsDefined()) parse_model_section(r, root["student"], "student", cfg.training, cfg.student);
  if (root["loss"].IsDefined()) parse_loss(r, root["loss"], cfg.loss);
  if (root["sampling"].IsDefined()) parse_sampling(r, root["sampling"], cfg.sampling);
  if (root["gradcheck"].IsDefined()) parse_gradcheck(r, root["gradcheck"], cfg.gradcheck);

  if (cfg.teacher && cfg.student && cfg.teacher->spec.num_classes != cfg.student->spec.num_classes) {
    r.error("student.num_classes", "output width " + std::to_string(cfg.student->spec.num_classes) +
                                       " differs from teacher output width " +
                                       std::to_string(cfg.teacher->spec.num_classes));
  }
  if (has_dataset && cfg.dataset.kind == DatasetKind::synth_blobs) {
    for (const auto* m : {&cfg.teacher, &cfg.student}) {
      if (*m && (*m)->spec.input_shape != Shape{cfg.dataset.blobs.dim}) {
        r.error(std::string(m == &cfg.teacher ? "teacher" : "student") + ".input_shape",
                "does not match synth_blobs samples of width " + std::to_string(cfg.dataset.blobs.dim));
      }
      if (*m && (*m)->spec.num_classes != cfg.dataset.blobs.classes) {
        r.error(std::string(m == &cfg.teacher ? "teacher" : "student") + ".num_classes",
                "does not match dataset.classes " + std::to_string(cfg.dataset.blobs.classes));
      }
    }
  }
  if (!r.errors.empty()) throw ConfigError(r.errors);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, bool check_files) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"--config: cannot read " + path});
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), check_files);
}

std::string model_spec_to_yaml(const ModelSpec& spec) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << spec.name;
  out << YAML::Key << "input_shape" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto d : spec.input_shape) out << d;
  out << YAML::EndSeq;
  out << YAML::Key << "num_classes" << YAML::Value << spec.num_classes;
  out << YAML::Key << "layers" << YAML::Value << YAML::BeginSeq;
  for (const auto& l : spec.layers) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "type" << YAML::Value << std::string(to_string(l.kind));
    switch (l.kind) {
      case LayerKind::conv2d:
        out << YAML::Key << "channels" << YAML::Value << l.channels;
        out << YAML::Key << "kernel" << YAML::Value << YAML::Flow << YAML::BeginSeq << l.kernel_h << l.kernel_w
            << YAML::EndSeq;
        out << YAML::Key << "padding" << YAML::Value << l.padding;
        break;
      case LayerKind::linear:
        out << YAML::Key << "units" << YAML::Value << l.units;
        break;
      case LayerKind::batchnorm2d:
        out << YAML::Key << "eps" << YAML::Value << l.bn_eps;
        out << YAML::Key << "momentum" << YAML::Value << l.bn_momentum;
        break;
      case LayerKind::dropout:
        out << YAML::Key << "rate" << YAML::Value << l.rate;
        break;
      default:
        break;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

ModelSpec model_spec_from_yaml(const std::string& text) {
  const YAML::Node root = parse_yaml(text);
  Reader r;
  auto spec = parse_model_spec(r, root, "model");
  if (!spec) throw ConfigError(r.errors);
  return *spec;
}

}  // namespace distill
