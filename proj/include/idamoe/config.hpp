// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration documents. See docs/config.md for the schema.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "idamoe/harness.hpp"

namespace idamoe {

inline constexpr int kSchemaVersion = 1;

/// Any problem with a config document: unreadable file, malformed JSON,
/// unknown or mistyped keys, or values that fail validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  TaskConfig task;
  TrainConfig train;
};

/// Parses and validates a config document. Missing keys keep their defaults;
/// unknown keys are rejected. `source` names the document in diagnostics, and
/// JSON syntax errors report it as source:line:column.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");

ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets both the task seed and the training seed.
void apply_seed_override(ExperimentConfig& cfg, std::optional<std::uint64_t> seed);

/// Full document with every key present, in schema order.
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

std::string_view to_string(GateLogits kind);
GateLogits gate_logits_from_string(std::string_view name);

}  // namespace idamoe
