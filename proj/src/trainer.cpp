#include "distill/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "distill/random.hpp"

namespace distill {

OptimConfig OptimConfig::cifar() { return {0.01, 0.9, 5e-4, StepDecay{0.1, 100}}; }

OptimConfig OptimConfig::tiny_imagenet() { return {0.001, 0.9, 5e-4, StepDecay{0.9, 3}}; }

void OptimConfig::validate() const {
  std::vector<std::string> errors;
  if (!(lr > 0.0) || !std::isfinite(lr)) errors.push_back("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) errors.push_back("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) errors.push_back("weight_decay must be >= 0");
  if (schedule) {
    if (!(schedule->factor > 0.0) || !std::isfinite(schedule->factor)) errors.push_back("schedule.factor must be > 0");
    if (schedule->period < 1) errors.push_back("schedule.period must be >= 1");
  }
  if (!errors.empty()) {
    std::string msg = "invalid optimizer config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
}

double lr_at_epoch(const OptimConfig& cfg, std::size_t epoch) {
  if (!cfg.schedule) return cfg.lr;
  const auto steps = static_cast<int>(epoch / cfg.schedule->period);
  const double raw = cfg.lr * std::pow(cfg.schedule->factor, steps);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", raw);
  return std::strtod(buf, nullptr);
}

void sgd_step(Tensor& weight, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay) {
  require_same_shape(weight, grad, "sgd_step gradient");
  require_same_shape(weight, velocity, "sgd_step momentum buffer");
  auto w = weight.data();
  auto g = grad.data();
  auto v = velocity.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i] + weight_decay * w[i];
    v[i] = momentum * v[i] + gi;
    w[i] -= lr * v[i];
  }
}

void sgd_step(ParamStore& params, std::span<const Tensor> grads, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay) {
  if (grads.size() != params.size()) throw ShapeError("sgd_step: one gradient per parameter entry expected");
  if (velocity.empty()) {
    for (const auto& e : params.entries()) velocity.push_back(Tensor::zeros_like(e.value));
  }
  if (velocity.size() != params.size()) throw ShapeError("sgd_step: momentum buffers do not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamEntry& e = params[i];
    if (!e.trainable) continue;
    sgd_step(e.value, grads[i], velocity[i], lr, momentum, e.decay ? weight_decay : 0.0);
  }
}

namespace {

// A trailing batch too small for batch statistics and sampled relations is
// folded into the one before it.
std::vector<std::vector<std::size_t>> training_batches(std::size_t n, const TrainConfig& cfg, std::size_t epoch) {
  auto out = batches(n, cfg.batch_size, cfg.seed, epoch);
  if (out.size() > 1 && out.back().size() < 3) {
    auto tail = std::move(out.back());
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

void check_inputs(const Model& model, const Dataset& train, const TrainConfig& cfg) {
  cfg.optim.validate();
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  train.validate();
  if (model.spec().num_classes != train.num_classes) {
    throw std::invalid_argument("model output width " + std::to_string(model.spec().num_classes) +
                                " does not match dataset classes " + std::to_string(train.num_classes));
  }
}

struct StepResult {
  double hard = 0.0;
  std::array<double, kSoftLosses.size()> soft{};
  double total = 0.0;
  bool omega_empty = false;
};

// Shared loop. `step` builds the loss on the tape and returns it together
// with its breakdown.
template <class StepFn>
TrainState run_training(Model& model, const Dataset& train, const Dataset* test, const TrainConfig& cfg,
                        StepFn&& step, bool abort_on_empty_omega) {
  TrainState state;
  state.seed = cfg.seed;
  for (const auto& e : model.params().entries()) state.velocity.push_back(Tensor::zeros_like(e.value));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.optim, epoch);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    std::size_t empty_batches = 0;
    const auto order = training_batches(train.size(), cfg, epoch);
    for (std::size_t s = 0; s < order.size(); ++s) {
      const auto& idx = order[s];
      Tape tape;
      const Binding binding = model.bind(tape, true);
      Rng dropout_rng = derive_rng(cfg.seed, {stream::dropout, epoch, s});
      const Var x = tape.constant(train.gather(idx));
      const Var logits = model.forward(tape, binding, x, Mode::training, dropout_rng);
      const auto labels = train.gather_labels(idx);
      StepResult r;
      const Var loss = step(tape, x, logits, labels, epoch, s, r);
      r.total = loss.value().item();
      if (!std::isfinite(r.total)) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(s) +
                            ": loss is " + std::to_string(r.total) + "; lower the learning rate");
      }
      const Gradients grads = tape.backward(loss);
      std::vector<Tensor> g;
      g.reserve(binding.vars.size());
      for (const Var& v : binding.vars) g.push_back(grads.of(v));
      sgd_step(model.params(), g, state.velocity, lr, cfg.optim.momentum, cfg.optim.weight_decay);

      state.step_losses.push_back(r.total);
      m.hard_loss += r.hard;
      for (std::size_t k = 0; k < m.soft.size(); ++k) m.soft[k] += r.soft[k];
      m.total_loss += r.total;
      if (r.omega_empty) ++empty_batches;
    }
    if (abort_on_empty_omega && empty_batches == order.size()) {
      throw TrainingError("epoch " + std::to_string(epoch) +
                          ": no batch had a negative from a different teacher class, so the triplet distillation "
                          "loss was empty all epoch; use larger batches or a more diverse dataset");
    }
    const auto nb = static_cast<double>(order.size());
    m.hard_loss /= nb;
    for (auto& v : m.soft) v /= nb;
    m.total_loss /= nb;
    m.test_accuracy = test ? evaluate_accuracy(model, *test) : std::numeric_limits<double>::quiet_NaN();
    state.history.push_back(m);
    state.epoch = epoch + 1;
  }
  return state;
}

}  // namespace

TrainState train_teacher(Model& model, const Dataset& train, const Dataset* test, const TrainConfig& config) {
  check_inputs(model, train, config);
  auto step = [](Tape&, Var, Var logits, const std::vector<std::size_t>& labels, std::size_t, std::size_t,
                 StepResult& r) {
    const Var loss = cross_entropy_loss(logits, labels);
    r.hard = loss.value().item();
    return loss;
  };
  return run_training(model, train, test, config, step, false);
}

TrainState distill_student(Model& student, const Model& teacher, const Dataset& train, const Dataset* test,
                           const LossSpec& loss, const SamplingConfig& sampling, const TrainConfig& config) {
  check_inputs(student, train, config);
  loss.validate();
  if (teacher.spec().num_classes != student.spec().num_classes) {
    throw std::invalid_argument("teacher output width " + std::to_string(teacher.spec().num_classes) +
                                " differs from student output width " + std::to_string(student.spec().num_classes));
  }
  const bool needs_pairs = loss.uses(SoftLoss::rkd_d);
  const bool needs_triplets = loss.uses(SoftLoss::rkd_a);
  const bool needs_negatives = loss.uses(SoftLoss::triplet_kd);
  bool triplet_only = needs_negatives;
  for (auto kind : kSoftLosses) {
    if (kind != SoftLoss::triplet_kd && loss.uses(kind)) triplet_only = false;
  }

  LossDiagnostics diagnostics;
  auto step = [&](Tape& tape, Var x, Var logits, const std::vector<std::size_t>& labels, std::size_t epoch,
                  std::size_t s, StepResult& r) {
    const Binding frozen = teacher.bind(tape, false);
    const Var t_out = tape.constant(teacher.forward(tape, frozen, x).value());

    BatchIndexSets sets;
    const std::size_t n = labels.size();
    if (needs_pairs || needs_triplets || needs_negatives) {
      Rng rng = derive_rng(config.seed, {stream::sampling, epoch, s});
      if (needs_pairs) sets.pairs = sample_pairs(n, sampling.pairs, rng);
      if (needs_triplets) sets.triplets = sample_triplets(n, sampling.triplets, rng);
      if (needs_negatives) {
        Tensor t_space = t_out.value(), s_space = logits.value();
        if (loss.target_space == TargetSpace::softmax) {
          t_space = softmax_rows(t_space);
          s_space = softmax_rows(s_space);
        }
        sets.negatives = sample_kd_negatives(t_space, sampling.negatives, rng, &s_space, labels);
        r.omega_empty = sets.negatives.entries.empty();
      }
    }
    const LossBreakdown b = combined_loss(loss, BatchOutputs{t_out, logits, labels, &sets}, &diagnostics);
    r.hard = b.hard;
    r.soft = b.soft;
    return b.total;
  };
  TrainState state = run_training(student, train, test, config, step, triplet_only);
  state.diagnostics = diagnostics;
  return state;
}

double evaluate_accuracy(const Model& model, const Dataset& data, std::size_t batch_size) {
  data.validate();
  if (model.spec().num_classes != data.num_classes) {
    throw std::invalid_argument("model output width does not match dataset classes");
  }
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto predicted = argmax_rows(model.predict(data.gather(idx)));
    for (std::size_t k = 0; k < idx.size(); ++k) correct += predicted[k] == data.labels[idx[k]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics(std::ostream& os, const std::vector<EpochMetrics>& history,
                   const std::vector<std::pair<std::string, std::string>>& tags) {
  for (const auto& [k, v] : tags) os << "# " << k << ": " << v << '\n';
  os << kMetricsColumns << '\n';
  for (const auto& m : history) {
    os << m.epoch << '\t' << fmt(m.lr) << '\t' << fmt(m.hard_loss);
    for (double s : m.soft) os << '\t' << fmt(s);
    os << '\t' << fmt(m.total_loss) << '\t' << fmt(m.test_accuracy) << '\n';
  }
}

void write_metrics(const std::string& path, const std::vector<EpochMetrics>& history,
                   const std::vector<std::pair<std::string, std::string>>& tags) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_metrics(os, history, tags);
}

std::optional<std::string> MetricsFile::tag(std::string_view key) const {
  for (const auto& [k, v] : tags) {
    if (k == key) return v;
  }
  return std::nullopt;
}

MetricsFile read_metrics(std::istream& is) {
  MetricsFile out;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto colon = line.find(": ");
      if (colon == std::string::npos) throw FormatError("metrics line " + std::to_string(lineno) + ": bad tag");
      out.tags.emplace_back(line.substr(2, colon - 2), line.substr(colon + 2));
      continue;
    }
    if (!header) {
      if (line != kMetricsColumns) throw FormatError("metrics line " + std::to_string(lineno) + ": unexpected header");
      header = true;
      continue;
    }
    std::istringstream row(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(row, cell, '\t');) cells.push_back(cell);
    if (cells.size() != 10) throw FormatError("metrics line " + std::to_string(lineno) + ": expected 10 columns");
    EpochMetrics m;
    try {
      m.epoch = std::stoul(cells[0]);
      m.lr = std::stod(cells[1]);
      m.hard_loss = std::stod(cells[2]);
      for (std::size_t k = 0; k < m.soft.size(); ++k) m.soft[k] = std::stod(cells[3 + k]);
      m.total_loss = std::stod(cells[8]);
      m.test_accuracy = std::stod(cells[9]);
    } catch (const std::logic_error&) {
      throw FormatError("metrics line " + std::to_string(lineno) + ": unparsable number");
    }
    out.history.push_back(m);
  }
  if (!header) throw FormatError("metrics file has no header");
  return out;
}

MetricsFile read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  return read_metrics(is);
}

}  // namespace distill
