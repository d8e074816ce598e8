#include <iostream>

#include "CLI11.hpp"
#include "distill/commands.hpp"

int main(int argc, char** argv) {
  using namespace distill;
  CLI::App app{"Teacher/student knowledge distillation experiments"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", opts.config_path, "Experiment file (YAML)");
    if (needs_config) c->required();
    cmd->add_option("--seed", seed, "Run a single seed instead of the configured list");
    cmd->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  };

  auto* train = app.add_subcommand("train-teacher", "Train the teacher with cross-entropy");
  auto* distill = app.add_subcommand("distill", "Train the student against the frozen teacher");
  auto* eval = app.add_subcommand("eval", "Test accuracy of saved checkpoints");
  auto* count = app.add_subcommand("count-params", "Trainable parameter counts and their ratio");
  auto* grad = app.add_subcommand("gradcheck", "Check every loss and layer against finite differences");
  auto* compare = app.add_subcommand("compare", "Accuracy table over completed runs");
  for (auto* c : {train, distill, eval, count}) add_common(c, true);
  add_common(grad, false);
  add_common(compare, false);
  grad->add_flag("--inject-fault", opts.inject_fault, "Add a case with a deliberately wrong gradient");
  compare->add_option("inputs", opts.inputs, "Metrics files or directories");
  compare->add_flag("--json", opts.json, "Print JSON instead of the aligned table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  auto* cmd = app.get_subcommands().front();
  if (cmd->count("--seed")) opts.seed = seed;
  if (cmd->count("--out")) opts.out_dir = out_dir;

  if (cmd == train) return cmd_train_teacher(opts, std::cout, std::cerr);
  if (cmd == distill) return cmd_distill(opts, std::cout, std::cerr);
  if (cmd == eval) return cmd_eval(opts, std::cout, std::cerr);
  if (cmd == count) return cmd_count_params(opts, std::cout, std::cerr);
  if (cmd == grad) return cmd_gradcheck(opts, std::cout, std::cerr);
  return cmd_compare(opts, std::cout, std::cerr);
}
