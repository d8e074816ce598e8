#pragma once

// Experiment files. The format is YAML; see README.md for the accepted keys.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "distill/data.hpp"
#include "distill/gradsuite.hpp"
#include "distill/losses.hpp"
#include "distill/model.hpp"
#include "distill/trainer.hpp"

namespace distill {

/// Every violation found in a config, each prefixed by its field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

enum class DatasetKind { synth_blobs, cifar10, idx };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synth_blobs;
  BlobsOptions blobs;
  std::optional<std::uint64_t> blobs_seed;  // defaults to the run seed
  double test_fraction = 0.2;
  std::vector<std::string> train_files, test_files;  // cifar10
  std::string train_images, train_labels, test_images, test_labels;  // idx
  bool standardize = false;
};

struct TrainingSection {
  OptimConfig optim;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
};

struct ModelSection {
  ModelSpec spec;
  /// Path template; "{seed}" and "{out}" are substituted. Empty: derived from the output directory.
  std::string checkpoint;
  std::optional<TrainingSection> training;  // overrides the top-level section for this model
};

struct ExperimentConfig {
  std::string name;  // method label; derived from the loss terms when empty
  DatasetConfig dataset;
  std::optional<ModelSection> teacher, student;
  TrainingSection training;
  LossSpec loss;
  SamplingConfig sampling;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  SuiteOptions gradcheck;

  /// Label used in metrics files and comparison tables.
  std::string method() const;
  const TrainingSection& training_for(const ModelSection& m) const { return m.training ? *m.training : training; }
};

/// Parses and validates; throws ConfigError listing every problem. With
/// `check_files`, dataset paths must name existing files.
ExperimentConfig parse_config(const std::string& text, bool check_files = true);
ExperimentConfig load_config(const std::string& path, bool check_files = true);

std::string model_spec_to_yaml(const ModelSpec& spec);
/// Accepts either a preset reference or an explicit layer list.
ModelSpec model_spec_from_yaml(const std::string& text);

/// "student" when no soft term is active, else the active terms joined by '+'.
std::string method_label(const LossSpec& loss);

/// Replaces "{seed}" and "{out}" in `pattern`.
std::string expand_path(const std::string& pattern, std::uint64_t seed, const std::string& out_dir);

}  // namespace distill
