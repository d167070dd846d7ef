#include <Eigen/Core>

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "icon/commands.hpp"

namespace {

// ICON_THREADS caps the worker count; unset means 1.
int thread_cap() {
  const char* env = std::getenv("ICON_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 4096) throw icon::ConfigError(std::string("ICON_THREADS: expected a positive integer, got '") + env + "'");
  return static_cast<int>(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"icon: continual identification of shared latents"};
  app.require_subcommand(1);
  icon::CommandOptions opts;
  std::string config;
  std::uint64_t seed = 0;
  std::string data;
  int tasks = 0, n = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON run configuration");
    sub->add_option("--seed", seed, "top-level seed (overrides the config)");
    sub->add_option("--out", opts.out, "output directory")->required();
  };

  auto* gen = app.add_subcommand("gen", "generate the synthetic benchmark");
  add_common(gen);
  gen->add_option("--tasks", tasks, "number of tasks")->check(CLI::PositiveNumber);
  gen->add_option("--n", n, "samples per task")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "run the two-stage training sequence");
  add_common(train);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_flag("--no-kl", opts.no_kl, "skip the KL alignment stage");

  auto* eval = app.add_subcommand("eval", "metrics report and scatter exports");
  add_common(eval);
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--checkpoint", opts.checkpoints, "checkpoint directory (repeat for both arms)")->required();

  auto* verify = app.add_subcommand("verify", "check the theorem assumptions");
  add_common(verify);
  verify->add_option("--data", data, "dataset directory")->required();
  verify->add_option("--checkpoint", opts.checkpoints, "checkpoint directory (default: ground-truth mixer)");

  auto* exp = app.add_subcommand("export", "latent scatter CSV and SVG");
  add_common(exp);
  exp->add_option("--data", data, "dataset directory")->required();
  exp->add_option("--checkpoint", opts.checkpoints, "checkpoint directory (repeat for both arms)")->required();

  auto* cls = app.add_subcommand("classify", "continual classification over embeddings");
  add_common(cls);
  cls->add_option("--data", data, "embedding directory (default: synthetic benchmark)");
  cls->add_flag("--no-kl", opts.no_kl, "skip the KL alignment stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : icon::kExitValidation;
  }

  try {
    Eigen::setNbThreads(thread_cap());
  } catch (const icon::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return icon::kExitValidation;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--config")) opts.config_path = config;
  if (sub->count("--seed")) opts.seed = seed;
  if (!data.empty()) opts.data = data;
  if (sub == gen && gen->count("--tasks")) opts.tasks = tasks;
  if (sub == gen && gen->count("--n")) opts.n = n;
  return icon::run_command(sub->get_name(), opts, std::cerr);
}
