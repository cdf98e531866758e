#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "bdd/commands.hpp"
#include "bdd/errors.hpp"

namespace {

struct ExperimentFlags {
  std::string config;
  std::string out = "bdd_out";
  std::string seeds;
  std::string mode;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--config", f.config, "YAML experiment file (built-in defaults when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--seeds", f.seeds, "Seed list, e.g. 0,1,2 or 0-9");
  cmd->add_option("--mode", f.mode, "Student loss: ce|kd|bdd|bdd_accum|bdd_seg");
}

bdd::CommandOptions to_options(const ExperimentFlags& f) {
  bdd::CommandOptions o;
  if (!f.config.empty()) o.config = f.config;
  o.out = f.out;
  if (!f.seeds.empty()) o.seeds = bdd::parse_seed_list(f.seeds);
  if (!f.mode.empty()) o.mode = f.mode;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced forward/reverse KL distillation lab"};
  app.require_subcommand(1);

  bdd::GradcheckOptions grad;
  std::string grad_out = "bdd_out";
  auto* gradcheck = app.add_subcommand("gradcheck", "Backward pass vs central finite differences");
  gradcheck->add_option("--trials", grad.trials, "Random inputs per loss")->capture_default_str();
  gradcheck->add_option("--seed", grad.seed, "Input seed")->capture_default_str();
  gradcheck->add_option("--tolerance", grad.tolerance, "Max relative error")->capture_default_str();
  gradcheck->add_option("--out", grad_out, "Output directory")->capture_default_str();
  gradcheck->add_flag("--inject-fault", grad.corrupt_gradient,
                      "Scale analytic gradients by 1.01 before comparing");

  bdd::PropertyOptions props;
  std::string props_out = "bdd_out";
  auto* properties = app.add_subcommand("properties", "Invariant suite");
  properties->add_option("--seed", props.seed, "Input seed")->capture_default_str();
  properties->add_option("--epsilon", props.epsilon, "Probability floor inside logarithms")
      ->capture_default_str();
  properties->add_option("--out", props_out, "Output directory")->capture_default_str();

  ExperimentFlags gen_flags, distill_flags, sweep_flags, eval_flags;
  auto* gen = app.add_subcommand("gen-data", "Write the configured train/val splits");
  add_experiment_flags(gen, gen_flags);
  auto* distill = app.add_subcommand("distill", "Train or load the teacher, then distill a student");
  add_experiment_flags(distill, distill_flags);
  auto* sweep = app.add_subcommand("sweep", "Baseline, alpha and temperature grids over seeds");
  add_experiment_flags(sweep, sweep_flags);
  std::size_t threads = bdd::sweep_threads_from_env();
  bool no_timing = false;
  sweep->add_option("--threads", threads, "Worker threads (default: BDD_THREADS or 1)");
  sweep->add_flag("--no-timing", no_timing, "Leave wall time out of the CSVs and teacher_metrics.json");
  auto* eval = app.add_subcommand("eval", "Evaluate the checkpoints in --out");
  add_experiment_flags(eval, eval_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheck) return bdd::cmd_gradcheck(grad, grad_out, std::cout);
    if (*properties) return bdd::cmd_properties(props, props_out, std::cout);
    if (*gen) return bdd::cmd_gen_data(to_options(gen_flags), std::cout);
    if (*distill) return bdd::cmd_distill(to_options(distill_flags), std::cout);
    if (*sweep) {
      bdd::CommandOptions o = to_options(sweep_flags);
      o.threads = threads;
      o.timing = !no_timing;
      return bdd::cmd_sweep(o, std::cout);
    }
    if (*eval) return bdd::cmd_eval(to_options(eval_flags), std::cout);
  } catch (const bdd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
