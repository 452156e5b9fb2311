// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace idamoe {

namespace {

using json = nlohmann::ordered_json;

// Each visitor call names one key and the field it binds to. Reading and
// writing share these lists so the schema has a single definition.
template <class F>
void visit(TaskConfig& c, F&& f) {
  f("n_clusters", c.n_clusters);
  f("dim", c.dim);
  f("out_dim", c.out_dim);
  f("cluster_radius", c.cluster_radius);
  f("shared_offset", c.shared_offset);
  f("cluster_scale", c.cluster_scale);
  f("target_scale", c.target_scale);
  f("noise_std", c.noise_std);
  f("seed", c.seed);
}

template <class F>
void visit(TrainConfig& c, F&& f) {
  f("router_kind", c.router_kind);
  f("n_experts", c.n_experts);
  f("n_components", c.n_components);
  f("top_k", c.top_k);
  f("input_dim", c.input_dim);
  f("latent_dim", c.latent_dim);
  f("hidden_dim", c.hidden_dim);
  f("out_dim", c.out_dim);
  f("alpha", c.alpha);
  f("beta", c.beta);
  f("aux_alpha", c.aux_alpha);
  f("reactivation_on", c.reactivation_on);
  f("lr", c.lr);
  f("steps", c.steps);
  f("batch_tokens", c.batch_tokens);
  f("seed", c.seed);
  f("warmup_steps", c.warmup_steps);
  f("warmup_lr", c.warmup_lr);
  f("projector_warmup_lr", c.projector_warmup_lr);
  f("router_init_scale", c.router_init_scale);
  f("gate_logits", c.gate_logits);
  f("final_window", c.final_window);
}

std::string type_error(const std::string& key, const char* expected, const json& v) {
  return "key '" + key + "': expected " + expected + ", got " + v.type_name();
}

struct Reader {
  const json& obj;
  std::string section;
  std::set<std::string> seen;

  template <class T>
  void operator()(const char* name, T& field) {
    seen.insert(name);
    const auto it = obj.find(name);
    if (it == obj.end()) return;
    const std::string key = section + "." + name;
    const json& v = *it;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(type_error(key, "a boolean", v));
      field = v.get<bool>();
    } else if constexpr (std::is_same_v<T, RouterKind> || std::is_same_v<T, GateLogits>) {
      if (!v.is_string()) throw ConfigError(type_error(key, "a string", v));
      try {
        if constexpr (std::is_same_v<T, RouterKind>) {
          field = router_kind_from_string(v.get<std::string>());
        } else {
          field = gate_logits_from_string(v.get<std::string>());
        }
      } catch (const std::invalid_argument& e) {
        throw ConfigError("key '" + key + "': " + e.what());
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) {
        throw ConfigError(type_error(key, "a non-negative integer", v));
      }
      field = v.get<T>();
    } else {
      if (!v.is_number()) throw ConfigError(type_error(key, "a number", v));
      field = v.get<T>();
    }
  }

  void reject_unknown() const {
    for (const auto& [k, _] : obj.items()) {
      if (!seen.count(k)) throw ConfigError("unknown key '" + section + "." + k + "'");
    }
  }
};

struct Writer {
  json& obj;

  template <class T>
  void operator()(const char* name, const T& field) {
    if constexpr (std::is_same_v<T, RouterKind> || std::is_same_v<T, GateLogits>) {
      obj[name] = std::string(to_string(field));
    } else {
      obj[name] = field;
    }
  }
};

template <class Section>
void read_section(const json& doc, const char* name, Section& out) {
  const auto it = doc.find(name);
  if (it == doc.end()) return;
  if (!it->is_object()) throw ConfigError(type_error(name, "an object", *it));
  Reader r{*it, name, {}};
  visit(out, r);
  r.reject_unknown();
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

std::string_view to_string(GateLogits kind) {
  return kind == GateLogits::raw_posterior ? "raw_posterior" : "log_posterior";
}

GateLogits gate_logits_from_string(std::string_view name) {
  if (name == "raw_posterior") return GateLogits::raw_posterior;
  if (name == "log_posterior") return GateLogits::log_posterior;
  throw std::invalid_argument("unknown gate logits '" + std::string(name) + "'");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte);
    std::string what = e.what();
    const auto colon = what.find(": ", what.find("parse error"));
    std::ostringstream os;
    os << source << ":" << line << ":" << col << ": invalid JSON"
       << (colon == std::string::npos ? "" : what.substr(colon));
    throw ConfigError(os.str());
  }
  if (!doc.is_object()) throw ConfigError(source + ": top level must be an object");

  const auto version = doc.find("schema_version");
  if (version == doc.end()) throw ConfigError(source + ": missing 'schema_version'");
  if (!version->is_number_integer() || version->get<long long>() != kSchemaVersion) {
    throw ConfigError(source + ": unsupported schema_version " + version->dump() +
                      " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  for (const auto& [k, _] : doc.items()) {
    if (k != "schema_version" && k != "task" && k != "train") {
      throw ConfigError(source + ": unknown key '" + k + "'");
    }
  }

  ExperimentConfig cfg;
  try {
    read_section(doc, "task", cfg.task);
    read_section(doc, "train", cfg.train);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }

  try {
    cfg.train.validate();
    if (cfg.task.n_clusters == 0 || cfg.task.dim == 0 || cfg.task.out_dim == 0) {
      throw std::invalid_argument("task counts must be >= 1");
    }
    if (cfg.task.cluster_scale < 0.0 || cfg.task.noise_std < 0.0) {
      throw std::invalid_argument("task scales must be non-negative");
    }
    if (cfg.train.input_dim != cfg.task.dim || cfg.train.out_dim != cfg.task.out_dim) {
      throw std::invalid_argument("train.input_dim/out_dim must equal task.dim/out_dim");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

void apply_seed_override(ExperimentConfig& cfg, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  cfg.task.seed = *seed;
  cfg.train.seed = *seed;
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  json doc{{"schema_version", kSchemaVersion}};
  ExperimentConfig copy = cfg;
  json task = json::object(), train = json::object();
  Writer wt{task}, wr{train};
  visit(copy.task, wt);
  visit(copy.train, wr);
  doc["task"] = std::move(task);
  doc["train"] = std::move(train);
  return doc;
}

}  // namespace idamoe
