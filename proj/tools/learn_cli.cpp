#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "commands.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string root;
  std::string seed;
};

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("-c,--config", opt.config, "INI config file")->check(CLI::ExistingFile);
  sub->add_option("-s,--set", opt.overrides, "override a key, e.g. learn.lr=0.001")->take_all();
  sub->add_option("--root", opt.root, "run directory (run.root)");
  sub->add_option("--seed", opt.seed, "master seed (run.seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-robust feature reconstruction on a frozen CNN"};
  app.require_subcommand(1);
  Options opt;
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "print the default config and exit");

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const learn::RunConfig&, std::ostream&);
  };
  const Command commands[] = {
      {"generate-data", "render the manifest and freeze the test sets", learn::cmd_generate_data},
      {"train-backbone", "finetune and freeze the backbone, fit the normalizer", learn::cmd_train_backbone},
      {"train-learn", "train the autoencoder on the frozen backbone", learn::cmd_train_learn},
      {"evaluate", "write baseline and proposed results tables",
       [](const learn::RunConfig& c, std::ostream& o) { learn::cmd_evaluate(c, o); }},
      {"report", "collect a run into report.md", learn::cmd_report},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, opt);
    subs.emplace_back(sub, &c);
  }
  app.require_subcommand(print_defaults ? 0 : 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::RequiredError& e) {
    if (!print_defaults) {
      app.exit(e);
      return 1;
    }
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (print_defaults) {
    std::cout << learn::emit_config(learn::RunConfig{});
    return 0;
  }

  try {
    auto overrides = opt.overrides;
    if (!opt.root.empty()) overrides.push_back("run.root=" + opt.root);
    if (!opt.seed.empty()) overrides.push_back("run.seed=" + opt.seed);
    const auto config = learn::resolve_config(opt.config, overrides);
    for (const auto& [sub, cmd] : subs)
      if (sub->parsed()) cmd->run(config, std::cout);
  } catch (const learn::InvariantViolation& e) {
    std::cerr << "invariant violated: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
