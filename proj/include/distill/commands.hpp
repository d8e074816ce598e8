#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "distill/config.hpp"

namespace distill {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitCheckFailed = 3 };

struct CommandOptions {
  std::string config_path;  // empty: built-in defaults (gradcheck only)
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> inputs;  // compare: metrics files or directories
  bool json = false;                // compare: print JSON instead of the table
  bool inject_fault = false;        // gradcheck self-test
};

int cmd_train_teacher(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_distill(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_count_params(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_compare(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Train/test split for one run seed, loaded or generated per the dataset section.
std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed);

/// Default output locations inside `cfg.output_dir`.
std::string teacher_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string student_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string teacher_metrics_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string student_metrics_path(const ExperimentConfig& cfg, std::uint64_t seed);

struct CompareRow {
  std::string role;  // student or teacher
  std::string method;
  std::vector<double> accuracies;  // final-epoch test accuracy per run
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
};

/// Groups final accuracies by (role, method) in table order: the plain
/// student, distilled methods, then the teacher.
std::vector<CompareRow> summarize_runs(const std::vector<MetricsFile>& runs);

}  // namespace distill
