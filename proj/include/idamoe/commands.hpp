// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the idamoe tool. Each returns a process exit code.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "idamoe/config.hpp"
#include "idamoe/gradcheck.hpp"

namespace idamoe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

enum class Command { grad_check, train, compare, ablate, dump_params };

struct CliConfig {
  Command command = Command::grad_check;
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed_override;
  // grad-check
  std::optional<GradFamily> corrupt;
  // ablate
  std::string axis;
  std::vector<std::string> values;
  // compare
  bool parallel = true;
};

/// Runs one command, printing progress to `out` and diagnostics to `err`.
/// Maps ConfigError to 2, NonFiniteError and other failures to 1.
int run_command(const CliConfig& cli, std::ostream& out, std::ostream& err);

/// Writes <out>/{baseline_no_aux,baseline_aux,ida}.csv and <out>/summary.json.
void compare_routers(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                     bool parallel);

}  // namespace idamoe
