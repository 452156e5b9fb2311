// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "idamoe/config.hpp"

using namespace idamoe;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ParseConfig, MinimalDocumentKeepsDefaults) {
  const ExperimentConfig cfg = parse_config(R"({"schema_version": 1})");
  EXPECT_EQ(to_json(cfg), to_json(ExperimentConfig{}));
}

TEST(ParseConfig, OverridesFields) {
  const ExperimentConfig cfg = parse_config(R"({
    "schema_version": 1,
    "task": {"n_clusters": 6, "noise_std": 0.25},
    "train": {"router_kind": "baseline_aux", "steps": 17, "reactivation_on": false,
              "gate_logits": "log_posterior", "lr": 0.5}
  })");
  EXPECT_EQ(cfg.task.n_clusters, 6u);
  EXPECT_EQ(cfg.task.noise_std, 0.25);
  EXPECT_EQ(cfg.train.router_kind, RouterKind::baseline_aux);
  EXPECT_EQ(cfg.train.steps, 17u);
  EXPECT_FALSE(cfg.train.reactivation_on);
  EXPECT_EQ(cfg.train.gate_logits, GateLogits::log_posterior);
  EXPECT_EQ(cfg.train.lr, 0.5);
}

TEST(ParseConfig, SyntaxErrorReportsLineAndColumn) {
  const std::string msg = error_of("{\n  \"schema_version\": 1,\n  \"task\": {,}\n}");
  EXPECT_EQ(msg.rfind("cfg.json:3:", 0), 0u) << msg;
}

TEST(ParseConfig, RejectsBadDocuments) {
  EXPECT_NE(error_of(R"({"task": {}})").find("schema_version"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 2})").find("schema_version"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "extra": 1})").find("extra"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "train": {"stepz": 1}})").find("train.stepz"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "train": {"steps": -3}})").find("train.steps"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "train": {"lr": "fast"}})").find("train.lr"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "train": {"router_kind": "x"}})").find("router"),
            std::string::npos);
  EXPECT_FALSE(error_of(R"({"schema_version": 1, "train": {"top_k": 9}})").empty());
  EXPECT_FALSE(error_of(R"({"schema_version": 1, "task": {"dim": 5}})").empty());
  EXPECT_FALSE(error_of("[1, 2]").empty());
  EXPECT_FALSE(error_of(R"({"schema_version": 1, "task": 3})").empty());
}

TEST(ParseConfig, RoundTripIsExact) {
  ExperimentConfig cfg;
  cfg.task.cluster_radius = 0.1 + 0.2;
  cfg.train.router_kind = RouterKind::baseline_no_aux;
  cfg.train.seed = 987654321987ull;
  cfg.train.gate_logits = GateLogits::log_posterior;
  const auto doc = to_json(cfg);
  const ExperimentConfig back = parse_config(doc.dump());
  EXPECT_EQ(to_json(back), doc);
  EXPECT_EQ(back.task.cluster_radius, cfg.task.cluster_radius);
  EXPECT_EQ(doc.begin().key(), "schema_version");
}

TEST(LoadConfig, FileAndMissingFile) {
  const auto path = std::filesystem::temp_directory_path() / "idamoe_test_config.json";
  {
    std::ofstream out(path);
    out << R"({"schema_version": 1, "train": {"steps": 3}})";
  }
  EXPECT_EQ(load_config(path).train.steps, 3u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(ApplySeedOverride, SetsBothSeeds) {
  ExperimentConfig cfg;
  cfg.task.seed = 4;
  cfg.train.seed = 5;
  apply_seed_override(cfg, std::nullopt);
  EXPECT_EQ(cfg.task.seed, 4u);
  EXPECT_EQ(cfg.train.seed, 5u);
  apply_seed_override(cfg, 11);
  EXPECT_EQ(cfg.task.seed, 11u);
  EXPECT_EQ(cfg.train.seed, 11u);
}

TEST(GateLogits, StringRoundTrip) {
  for (GateLogits g : {GateLogits::raw_posterior, GateLogits::log_posterior})
    EXPECT_EQ(gate_logits_from_string(to_string(g)), g);
  EXPECT_THROW(gate_logits_from_string("softmax"), std::invalid_argument);
}
