// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// idamoe grad-check [--seed S] [--corrupt FAMILY]
// idamoe train       --config F --out D [--seed S]
// idamoe compare     --config F --out D [--seed S] [--sequential]
// idamoe ablate      --config F --axis A --values V1,V2,.. --out D [--seed S]
// idamoe dump-params --config F --out D [--seed S]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "idamoe/commands.hpp"

int main(int argc, char** argv) {
  using namespace idamoe;
  CLI::App app{"Mixture-of-experts routing experiments on synthetic clustered data"};
  app.require_subcommand(1);

  CliConfig cli;
  std::uint64_t seed = 0;
  std::string corrupt;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", cli.out_dir, "Output directory")->required();
    sub->add_option("--seed", seed, "Override both task and training seeds");
  };

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every gradient");
  gc->add_option("--seed", seed, "Instance seed (default 1)");
  gc->add_option("--corrupt", corrupt, "Perturb one family's analytic gradient by 1%");
  auto* tr = app.add_subcommand("train", "Train the configured router and write its metrics");
  add_common(tr);
  auto* cmp = app.add_subcommand("compare", "Train all three routers on the same task");
  add_common(cmp);
  cmp->add_flag("--sequential", "Run the routers one after another");
  auto* abl = app.add_subcommand("ablate", "Sweep one axis: latent_dim, centers, reactivation");
  add_common(abl);
  abl->add_option("--axis", cli.axis, "Axis name")->required();
  abl->add_option("--values", cli.values, "Comma-separated axis values")
      ->required()
      ->delimiter(',');
  auto* dump = app.add_subcommand("dump-params", "Write the initialized model as JSON");
  add_common(dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  bool seed_given = false;
  for (auto* sub : {gc, tr, cmp, abl, dump}) {
    if (sub->parsed() && sub->count("--seed") > 0) seed_given = true;
  }
  if (seed_given) cli.seed_override = seed;

  if (gc->parsed()) {
    cli.command = Command::grad_check;
    if (!corrupt.empty()) {
      try {
        cli.corrupt = grad_family_from_string(corrupt);
      } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      }
    }
  } else if (tr->parsed()) {
    cli.command = Command::train;
  } else if (cmp->parsed()) {
    cli.command = Command::compare;
    cli.parallel = cmp->count("--sequential") == 0;
  } else if (abl->parsed()) {
    cli.command = Command::ablate;
  } else {
    cli.command = Command::dump_params;
  }
  return run_command(cli, std::cout, std::cerr);
}
