// Command-line driver: pretrain, run, selfcheck, gradcheck.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "sgprompt/config.hpp"
#include "sgprompt/errors.hpp"
#include "sgprompt/experiment.hpp"
#include "sgprompt/selfcheck.hpp"

namespace {

struct ConfigArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  bool print_config = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value configuration file");
  cmd->add_flag("--print-config", args.print_config, "print the effective configuration first");
  for (const auto& key : sgprompt::config_keys()) {
    cmd->add_option("--" + key.name, args.overrides[key.name], key.help);
  }
}

sgprompt::ExperimentConfig resolve(const ConfigArgs& args, CLI::App* cmd) {
  sgprompt::KeyValues kv;
  if (!args.config_path.empty()) kv = sgprompt::read_key_values(args.config_path);
  for (const auto& [key, value] : args.overrides) {
    if (cmd->count("--" + key) > 0) kv[key] = value;
  }
  sgprompt::ExperimentConfig cfg = sgprompt::apply_key_values({}, kv);
  cfg.validate();
  if (args.print_config) std::cout << sgprompt::describe(cfg);
  return cfg;
}

int run_gradcheck(std::uint64_t seed) {
  int failures = 0;
  auto report = [&](const std::string& name, const sgprompt::ag::Expr& e) {
    const auto outcome = sgprompt::gradient_check(name, e);
    std::cout << (outcome.passed ? "PASS " : "FAIL ") << outcome.detail << "\n";
    if (!outcome.passed) ++failures;
  };
  for (const auto& [name, expr] : sgprompt::primitive_gradient_cases(seed)) report(name, expr);
  report("encoder_link_pred", sgprompt::encoder_link_pred_case(seed));
  for (std::uint64_t i = 0; i < 20; ++i) {
    report("random_expression#" + std::to_string(i),
           sgprompt::random_expression(seed * 1000 + i, 1 + i % 4, 8));
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph pre-training and prompt tuning"};
  app.require_subcommand(1);

  ConfigArgs pretrain_args;
  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "pre-train an encoder and cache its checkpoint");
  add_config_options(pretrain_cmd, pretrain_args);

  ConfigArgs run_args;
  CLI::App* run_cmd = app.add_subcommand("run", "pre-train (cached), tune prompts, evaluate tasks");
  add_config_options(run_cmd, run_args);

  app.add_subcommand("selfcheck", "run gradient, identity and oracle checks");

  std::uint64_t grad_seed = 11;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive");
  grad_cmd->add_option("--seed", grad_seed, "seed for the random test expressions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pretrain_cmd) {
      const auto cfg = resolve(pretrain_args, pretrain_cmd);
      const auto c = sgprompt::load_dataset(cfg);
      const auto outcome = sgprompt::pretrain_cached(cfg, c, &std::cerr);
      std::cout << "checkpoint " << outcome.checkpoint.string() << "\n"
                << "curve " << outcome.curve.string() << "\n";
      return 0;
    }
    if (*run_cmd) {
      const auto cfg = resolve(run_args, run_cmd);
      const auto report = sgprompt::run_experiment(cfg, &std::cerr);
      for (const auto& s : report.settings) std::cout << "tasks " << s.csv.string() << "\n";
      std::cout << "summary " << report.summary.string() << "\n";
      return 0;
    }
    if (app.got_subcommand("selfcheck")) {
      return sgprompt::run_checks(sgprompt::default_checks(), std::cout).exit_code();
    }
    if (*grad_cmd) return run_gradcheck(grad_seed);
  } catch (const sgprompt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
