#include "distill/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace distill {

namespace {

std::string percent(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, 100.0 * v);
  return buf;
}

// Loads the config and applies command-line overrides; prints and returns
// nullopt on validation failure.
std::optional<ExperimentConfig> load(const CommandOptions& opts, std::ostream& err, bool config_required = true,
                                     bool check_files = true) {
  try {
    ExperimentConfig cfg;
    if (!opts.config_path.empty()) {
      cfg = load_config(opts.config_path, check_files);
    } else if (config_required) {
      throw ConfigError({"--config: required for this command"});
    }
    if (opts.seed) cfg.seeds = {*opts.seed};
    if (opts.out_dir) cfg.output_dir = *opts.out_dir;
    return cfg;
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return std::nullopt;
  }
}

int fail_validation(const std::vector<std::string>& errors, std::ostream& err) {
  err << ConfigError(errors).what() << '\n';
  return kExitValidation;
}

std::vector<std::pair<std::string, std::string>> run_tags(const std::string& role, const std::string& method,
                                                          std::uint64_t seed, const ModelSpec& spec) {
  return {{"role", role},
          {"method", method},
          {"seed", std::to_string(seed)},
          {"model", spec.name},
          {"params", std::to_string(count_params(spec))}};
}

std::vector<std::uint8_t> file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

TrainConfig train_config(const TrainingSection& t, std::uint64_t seed) {
  return TrainConfig{t.optim, t.epochs, t.batch_size, seed};
}

// Runtime failures map to exit code 2.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

std::string teacher_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::string pattern = cfg.teacher && !cfg.teacher->checkpoint.empty() ? cfg.teacher->checkpoint
                                                                               : "{out}/teacher_seed{seed}.ckpt";
  return expand_path(pattern, seed, cfg.output_dir);
}

std::string student_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::string pattern = cfg.student && !cfg.student->checkpoint.empty()
                                  ? cfg.student->checkpoint
                                  : "{out}/" + cfg.method() + "_seed{seed}.ckpt";
  return expand_path(pattern, seed, cfg.output_dir);
}

std::string teacher_metrics_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return expand_path("{out}/teacher_seed{seed}.tsv", seed, cfg.output_dir);
}

std::string student_metrics_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return expand_path("{out}/" + cfg.method() + "_seed{seed}.tsv", seed, cfg.output_dir);
}

std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  const DatasetConfig& d = cfg.dataset;
  std::pair<Dataset, Dataset> out;
  switch (d.kind) {
    case DatasetKind::synth_blobs: {
      BlobsOptions o = d.blobs;
      o.seed = d.blobs_seed.value_or(seed);
      out = split_dataset(synth_blobs(o), d.test_fraction, o.seed);
      break;
    }
    case DatasetKind::cifar10:
      out = {load_cifar10_binary(d.train_files), load_cifar10_binary(d.test_files)};
      break;
    case DatasetKind::idx:
      out = {load_idx(d.train_images, d.train_labels), load_idx(d.test_images, d.test_labels)};
      out.second.num_classes = out.first.num_classes = std::max(out.first.num_classes, out.second.num_classes);
      break;
  }
  if (d.standardize) {
    const Standardizer s = Standardizer::fit(out.first);
    s.apply(out.first);
    s.apply(out.second);
  }
  return out;
}

int cmd_train_teacher(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg = load(opts, err);
  if (!cfg) return kExitValidation;
  if (!cfg->teacher) return fail_validation({"teacher: required for train-teacher"}, err);
  const ModelSection& teacher = *cfg->teacher;
  out << "teacher " << teacher.spec.name << ": " << count_params(teacher.spec) << " parameters\n";
  return guarded(err, [&] {
    fs::create_directories(cfg->output_dir);
    for (auto seed : cfg->seeds) {
      auto [train, test] = load_experiment_data(*cfg, seed);
      Model model(teacher.spec, seed);
      const TrainState state = train_teacher(model, train, &test, train_config(cfg->training_for(teacher), seed));
      const std::string ckpt = teacher_checkpoint_path(*cfg, seed);
      if (auto parent = fs::path(ckpt).parent_path(); !parent.empty()) fs::create_directories(parent);
      model.params().save(ckpt);
      write_metrics(teacher_metrics_path(*cfg, seed), state.history, run_tags("teacher", "teacher", seed, teacher.spec));
      out << "seed " << seed << ": test accuracy " << percent(evaluate_accuracy(model, test)) << "% -> " << ckpt
          << '\n';
    }
    return kExitOk;
  });
}

int cmd_distill(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg = load(opts, err);
  if (!cfg) return kExitValidation;
  std::vector<std::string> errors;
  if (!cfg->student) errors.emplace_back("student: required for distill");
  const bool needs_teacher = std::any_of(kSoftLosses.begin(), kSoftLosses.end(),
                                         [&](SoftLoss k) { return cfg->loss.uses(k); });
  if (needs_teacher) {
    if (!cfg->teacher) {
      errors.emplace_back("teacher: required when a soft loss term is active");
    } else {
      for (auto seed : cfg->seeds) {
        const std::string p = teacher_checkpoint_path(*cfg, seed);
        if (!fs::is_regular_file(p)) errors.push_back("teacher.checkpoint: no such file: " + p);
      }
    }
  }
  if (!errors.empty()) return fail_validation(errors, err);
  const ModelSection& student = *cfg->student;
  const std::string method = cfg->method();

  return guarded(err, [&] {
    fs::create_directories(cfg->output_dir);
    int status = kExitOk;
    for (auto seed : cfg->seeds) {
      auto [train, test] = load_experiment_data(*cfg, seed);
      Model model(student.spec, seed);
      const TrainConfig tc = train_config(cfg->training_for(student), seed);
      TrainState state;
      if (needs_teacher) {
        const std::string tpath = teacher_checkpoint_path(*cfg, seed);
        Model teacher(cfg->teacher->spec, seed);
        teacher.params().load(tpath);
        const std::uint64_t file_before = fnv1a(file_bytes(tpath));
        const std::uint64_t mem_before = fnv1a(teacher.params().checkpoint_bytes());
        state = distill_student(model, teacher, train, &test, cfg->loss, cfg->sampling, tc);
        const std::uint64_t file_after = fnv1a(file_bytes(tpath));
        const std::uint64_t mem_after = fnv1a(teacher.params().checkpoint_bytes());
        const bool frozen = file_before == file_after && mem_before == mem_after && file_before == mem_before;
        out << "seed " << seed << ": teacher checksum " << hex64(mem_before) << " -> " << hex64(mem_after)
            << (frozen ? " (unchanged)" : " (CHANGED)") << '\n';
        if (!frozen) status = kExitCheckFailed;
        if (state.diagnostics.empty_omega > 0) {
          out << "seed " << seed << ": " << state.diagnostics.empty_omega
              << " batches had no cross-class negative\n";
        }
      } else {
        state = train_teacher(model, train, &test, tc);
      }
      const std::string ckpt = student_checkpoint_path(*cfg, seed);
      if (auto parent = fs::path(ckpt).parent_path(); !parent.empty()) fs::create_directories(parent);
      model.params().save(ckpt);
      write_metrics(student_metrics_path(*cfg, seed), state.history, run_tags("student", method, seed, student.spec));
      out << "seed " << seed << ": " << method << " test accuracy " << percent(evaluate_accuracy(model, test))
          << "% -> " << ckpt << '\n';
    }
    return status;
  });
}

int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg = load(opts, err);
  if (!cfg) return kExitValidation;
  struct Target {
    std::string role;
    const ModelSection* section;
    std::string (*path)(const ExperimentConfig&, std::uint64_t);
  };
  std::vector<Target> targets;
  if (cfg->teacher) targets.push_back({"teacher", &*cfg->teacher, teacher_checkpoint_path});
  if (cfg->student) targets.push_back({"student", &*cfg->student, student_checkpoint_path});
  std::vector<std::string> errors;
  if (targets.empty()) errors.emplace_back("teacher, student: at least one model section is required for eval");
  for (const auto& t : targets) {
    for (auto seed : cfg->seeds) {
      const std::string p = t.path(*cfg, seed);
      if (!fs::is_regular_file(p)) errors.push_back(t.role + ".checkpoint: no such file: " + p);
    }
  }
  if (!errors.empty()) return fail_validation(errors, err);

  return guarded(err, [&] {
    fs::create_directories(cfg->output_dir);
    for (auto seed : cfg->seeds) {
      auto [train, test] = load_experiment_data(*cfg, seed);
      std::ofstream report(expand_path("{out}/eval_seed{seed}.tsv", seed, cfg->output_dir));
      report << "role\tmethod\tseed\tparams\ttest_accuracy\n";
      for (const auto& t : targets) {
        Model model(t.section->spec, seed);
        model.params().load(t.path(*cfg, seed));
        const double acc = evaluate_accuracy(model, test);
        const std::string method = t.role == "teacher" ? "teacher" : cfg->method();
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", acc);
        report << t.role << '\t' << method << '\t' << seed << '\t' << count_params(t.section->spec) << '\t' << buf
               << '\n';
        out << "seed " << seed << ": " << t.role << " (" << method << ") test accuracy " << percent(acc) << "%\n";
      }
    }
    return kExitOk;
  });
}

int cmd_count_params(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg = load(opts, err, true, false);
  if (!cfg) return kExitValidation;
  if (!cfg->teacher && !cfg->student) {
    return fail_validation({"teacher, student: at least one model section is required"}, err);
  }
  std::uint64_t t = 0, s = 0;
  if (cfg->teacher) {
    t = count_params(cfg->teacher->spec);
    out << "teacher " << cfg->teacher->spec.name << ": " << t << '\n';
  }
  if (cfg->student) {
    s = count_params(cfg->student->spec);
    out << "student " << cfg->student->spec.name << ": " << s << '\n';
  }
  if (t && s) out << "ratio: " << percent(static_cast<double>(s) / static_cast<double>(t), 1) << "%\n";
  return kExitOk;
}

int cmd_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg = load(opts, err, false, false);
  if (!cfg) return kExitValidation;
  SuiteOptions so = cfg->gradcheck;
  if (opts.inject_fault) so.inject_fault = true;
  if (opts.seed) so.base_seed = *opts.seed;
  return guarded(err, [&] {
    const SuiteReport report = run_gradient_suite(so);
    std::ostringstream table;
    table << "case\tseeds_passed\tseeds\tmax_rel_error\tmax_abs_error\tchecked\tskipped\tstatus\n";
    for (const auto& c : report.cases) {
      char rel[32], abs[32];
      std::snprintf(rel, sizeof rel, "%.3e", c.max_rel_error);
      std::snprintf(abs, sizeof abs, "%.3e", c.max_abs_error);
      table << c.name << '\t' << c.seeds_passed << '\t' << c.seeds_run << '\t' << rel << '\t' << abs << '\t'
            << c.checked << '\t' << c.skipped << '\t' << (c.passed() ? "pass" : "FAIL") << '\n';
    }
    out << table.str();
    out << (report.passed() ? "all cases pass" : "gradient check FAILED") << " at tolerance " << so.tolerance << '\n';
    if (opts.out_dir) {
      fs::create_directories(*opts.out_dir);
      std::ofstream(fs::path(*opts.out_dir) / "gradcheck.tsv") << table.str();
    }
    return report.passed() ? kExitOk : kExitCheckFailed;
  });
}

std::vector<CompareRow> summarize_runs(const std::vector<MetricsFile>& runs) {
  std::map<std::pair<std::string, std::string>, CompareRow> groups;
  for (const auto& r : runs) {
    if (r.history.empty()) continue;
    const std::string role = r.tag("role").value_or("student");
    const std::string method = r.tag("method").value_or(role);
    CompareRow& row = groups[{role, method}];
    row.role = role;
    row.method = method;
    row.accuracies.push_back(r.history.back().test_accuracy);
  }
  auto rank = [](const CompareRow& r) {
    if (r.role == "teacher") return 3;
    if (r.method == "student") return 0;
    return 1;
  };
  std::vector<CompareRow> rows;
  for (auto& [_, row] : groups) {
    const auto n = static_cast<double>(row.accuracies.size());
    double sum = 0.0;
    for (double a : row.accuracies) sum += a;
    row.mean = sum / n;
    double ss = 0.0;
    for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
    row.stddev = row.accuracies.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [&](const CompareRow& a, const CompareRow& b) {
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    return a.method < b.method;
  });
  return rows;
}

int cmd_compare(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  std::vector<std::string> files, absent;
  std::optional<ExperimentConfig> cfg;
  if (!opts.config_path.empty()) {
    cfg = load(opts, err, true, false);
    if (!cfg) return kExitValidation;
    for (auto seed : cfg->seeds) {
      if (cfg->teacher) files.push_back(teacher_metrics_path(*cfg, seed));
      if (cfg->student) files.push_back(student_metrics_path(*cfg, seed));
    }
  }
  std::vector<std::string> scanned;
  for (const auto& in : opts.inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".tsv") found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      scanned.insert(scanned.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  if (files.empty() && scanned.empty()) {
    return fail_validation({"compare: give --config or at least one metrics file or directory"}, err);
  }

  return guarded(err, [&] {
    std::vector<MetricsFile> runs;
    for (const auto& f : files) {
      try {
        runs.push_back(read_metrics(f));
      } catch (const FormatError&) {
        absent.push_back(f);
      }
    }
    std::vector<fs::path> seen;
    for (const auto& f : files) seen.push_back(fs::weakly_canonical(f));
    for (const auto& f : scanned) {
      if (std::find(seen.begin(), seen.end(), fs::weakly_canonical(f)) != seen.end()) continue;
      try {
        runs.push_back(read_metrics(f));
      } catch (const FormatError&) {
        // not a metrics file (eval or gradcheck report)
      }
    }
    const auto rows = summarize_runs(runs);

    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"role", r.role},
                           {"method", r.method},
                           {"runs", r.accuracies.size()},
                           {"mean_accuracy", r.mean},
                           {"stddev_accuracy", r.stddev},
                           {"accuracies", r.accuracies}});
    }
    j["absent"] = absent;
    j["complete"] = absent.empty();

    std::size_t width = 6;
    for (const auto& r : rows) width = std::max(width, r.method.size());
    std::ostringstream table;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s  %4s  %s\n", static_cast<int>(width), "method", "runs",
                  "test accuracy % (mean +- std)");
    table << line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%-*s  %4zu  %6s +- %s\n", static_cast<int>(width), r.method.c_str(),
                    r.accuracies.size(), percent(r.mean).c_str(), percent(r.stddev).c_str());
      table << line;
    }
    for (const auto& a : absent) table << "absent: " << a << '\n';

    if (opts.json) {
      out << j.dump(2) << '\n';
    } else {
      out << table.str();
    }
    const std::string dir = opts.out_dir ? *opts.out_dir : (cfg ? cfg->output_dir : "");
    if (!dir.empty()) {
      fs::create_directories(dir);
      std::ofstream(fs::path(dir) / "compare.json") << j.dump(2) << '\n';
      std::ofstream(fs::path(dir) / "compare.txt") << table.str();
    }
    if (!absent.empty()) {
      err << absent.size() << " expected metrics file(s) missing; table is incomplete\n";
      return kExitRuntime;
    }
    return kExitOk;
  });
}

}  // namespace distill
