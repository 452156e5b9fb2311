// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic text output: metrics CSVs, run summaries and ablation tables.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "idamoe/diagnostics.hpp"
#include "idamoe/harness.hpp"

namespace idamoe {

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double value);

/// step,cv_mean,entropy_mean,loss_task,loss_ae,loss_gmm,loss_react,loss_aux,counts_0..counts_{N-1}
std::string metrics_csv_header(std::size_t n_experts);
std::string metrics_csv(const std::vector<MetricsRecord>& series, std::size_t n_experts);

/// Keys: router_kind, final_cv_mean, final_entropy_mean, final_task_loss, steps, seed.
nlohmann::ordered_json run_summary(const TrainConfig& cfg,
                                   const std::vector<MetricsRecord>& series);

/// value,final_task_loss,final_cv_mean,final_entropy_mean
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// JSON text with two-space indent and a trailing newline.
std::string dump_json(const nlohmann::ordered_json& doc);

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace idamoe
