#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "distill/data.hpp"
#include "distill/losses.hpp"
#include "distill/model.hpp"
#include "distill/sampling.hpp"

namespace distill {

struct StepDecay {
  double factor = 0.1;
  std::size_t period = 100;
};

struct OptimConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::optional<StepDecay> schedule;  // nullopt: constant lr

  /// lr 0.01, x0.1 every 100 epochs.
  static OptimConfig cifar();
  /// lr 0.001, x0.9 every 3 epochs.
  static OptimConfig tiny_imagenet();
  /// Throws std::invalid_argument listing every violation.
  void validate() const;
};

/// lr * factor^floor(epoch / period), rounded to 15 significant digits so the
/// decimal schedule values come out exact.
double lr_at_epoch(const OptimConfig& cfg, std::size_t epoch);

/// g' = g + wd * w; v = mu * v + g'; w -= lr * v.
void sgd_step(Tensor& weight, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay);

/// Momentum SGD over every trainable entry of `params`. `grads` and
/// `velocity` are indexed like the store; weight decay only touches entries
/// flagged for it.
void sgd_step(ParamStore& params, std::span<const Tensor> grads, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double hard_loss = 0.0;
  std::array<double, kSoftLosses.size()> soft{};
  double total_loss = 0.0;
  double test_accuracy = 0.0;  // NaN when no test set is given
};

struct TrainState {
  std::size_t epoch = 0;
  std::vector<Tensor> velocity;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> history;
  std::vector<double> step_losses;  // total loss per optimizer step
  LossDiagnostics diagnostics;
};

struct TrainConfig {
  OptimConfig optim;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

struct SamplingConfig {
  std::size_t pairs = 128;
  std::size_t triplets = 128;
  NegativeOptions negatives;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cross-entropy training of `model` in place.
TrainState train_teacher(Model& model, const Dataset& train, const Dataset* test, const TrainConfig& config);

/// Trains `student` against a frozen `teacher` under `loss`. The teacher runs
/// in inference mode and is never written to.
TrainState distill_student(Model& student, const Model& teacher, const Dataset& train, const Dataset* test,
                           const LossSpec& loss, const SamplingConfig& sampling, const TrainConfig& config);

/// Fraction of samples whose argmax logit equals the label (inference mode).
double evaluate_accuracy(const Model& model, const Dataset& data, std::size_t batch_size = 256);

inline constexpr const char* kMetricsColumns =
    "epoch\tlr\thard_loss\tbkd\thkd\trkd_d\trkd_a\ttriplet_kd\ttotal_loss\ttest_accuracy";

/// Tab-separated metrics with a fixed header line; `#` lines carry run tags.
void write_metrics(std::ostream& os, const std::vector<EpochMetrics>& history,
                   const std::vector<std::pair<std::string, std::string>>& tags = {});
void write_metrics(const std::string& path, const std::vector<EpochMetrics>& history,
                   const std::vector<std::pair<std::string, std::string>>& tags = {});

struct MetricsFile {
  std::vector<std::pair<std::string, std::string>> tags;
  std::vector<EpochMetrics> history;
  std::optional<std::string> tag(std::string_view key) const;
};
/// Throws FormatError on a malformed file.
MetricsFile read_metrics(std::istream& is);
MetricsFile read_metrics(const std::string& path);

}  // namespace distill
