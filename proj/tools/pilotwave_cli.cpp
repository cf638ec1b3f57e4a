#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pilotwave/cli/commands.hpp"

namespace {

const char* describe(const std::string& name) {
  if (name == "evolve") return "Evolve a scalar wave packet and write density snapshots";
  if (name == "trajectories") return "Integrate guidance trajectories sampled from |psi0|^2";
  if (name == "equivariance") return "Test that transported samples stay |psi|^2 distributed";
  if (name == "fieldmodes") return "Field-mode guidance and mode-space equivariance";
  if (name == "bounds") return "Evaluate the macroscopic distinguishability bounds";
  if (name == "sterngerlach") return "Stern-Gerlach branch statistics from spinor guidance";
  if (name == "branching") return "Labeled field-mode branching and energy-density collapse";
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pilot-wave numerical laboratory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pilotwave::cli::kToolVersion);

  struct Flags {
    std::string config;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    std::string out;
    unsigned threads = 0;
    bool quiet = false;
  };
  std::vector<Flags> flags(pilotwave::cli::command_names().size());
  std::vector<CLI::App*> subs;

  for (std::size_t i = 0; i < flags.size(); ++i) {
    const auto& name = pilotwave::cli::command_names()[i];
    auto* sub = app.add_subcommand(name, describe(name));
    auto& f = flags[i];
    f.out = name + "-output";
    sub->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", f.overrides, "Override one key, section.key=value (repeatable)");
    sub->add_option("--seed", f.seed, "Random seed (overrides run.seed)");
    sub->add_option("--out", f.out, "Output directory")->capture_default_str();
    sub->add_option("--threads", f.threads, "Worker threads (overrides run.threads)");
    sub->add_flag("--quiet", f.quiet, "Print nothing on success");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pilotwave::cli::kValidation;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const auto& f = flags[i];
    pilotwave::cli::RunOptions opt;
    opt.command = subs[i]->get_name();
    if (subs[i]->count("--config")) opt.config_path = f.config;
    opt.overrides = f.overrides;
    if (subs[i]->count("--seed")) opt.seed = f.seed;
    opt.out_dir = f.out;
    if (subs[i]->count("--threads")) opt.threads = f.threads;
    opt.quiet = f.quiet;
    try {
      return pilotwave::cli::run_command(opt);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return pilotwave::cli::kNumerical;
    }
  }
  return pilotwave::cli::kValidation;
}
