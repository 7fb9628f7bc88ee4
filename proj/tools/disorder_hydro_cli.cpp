#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "disorder_hydro/harness.hpp"

using namespace disorder_hydro;

int main(int argc, char** argv) {
  CLI::App app{"Disordered exclusion process: exact spectra, transport coefficients, hydrodynamics"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  std::vector<CLI::App*> subs;
  for (const auto& name : subcommands()) {
    auto* s = app.add_subcommand(name);
    s->add_option("--config,-c", config_path, "INI config file");
    s->add_option("--out,-o", out_dir, "output directory");
    s->add_option("--seed", seed, "global seed (overrides the config)");
    s->add_flag("--dry-run", dry_run, "validate the config and print derived quantities");
    subs.push_back(s);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  std::string sub;
  for (auto* s : subs)
    if (s->parsed()) sub = s->get_name();

  try {
    config cfg;
    if (!config_path.empty())
      cfg = config::load(config_path, default_schema());
    else
      require(sub == "report", error_kind::invalid_spec, "--config is required for " + sub);
    const std::uint64_t s = seed ? *seed : static_cast<std::uint64_t>(cfg.integer("", "seed", 0));
    if (out_dir.empty()) out_dir = cfg.str("output", "dir", "out");
    return run_subcommand(sub, cfg, out_dir, s, dry_run, std::cout, std::cerr);
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  }
}
