// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/report.hpp"

#include <charconv>
#include <fstream>
#include <system_error>

namespace idamoe {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string metrics_csv_header(std::size_t n_experts) {
  std::string out = "step,cv_mean,entropy_mean,loss_task,loss_ae,loss_gmm,loss_react,loss_aux";
  for (std::size_t i = 0; i < n_experts; ++i) out += ",counts_" + std::to_string(i);
  return out;
}

std::string metrics_csv(const std::vector<MetricsRecord>& series, std::size_t n_experts) {
  std::string out = metrics_csv_header(n_experts) + "\n";
  for (const auto& m : series) {
    if (m.expert_counts.size() != n_experts) {
      throw std::invalid_argument("metrics_csv: record has " +
                                  std::to_string(m.expert_counts.size()) + " counts, expected " +
                                  std::to_string(n_experts));
    }
    out += std::to_string(m.step);
    for (double v : {m.cv_mean, m.entropy_mean, m.loss_task, m.loss_ae, m.loss_gmm, m.loss_react,
                     m.loss_aux}) {
      out += ',';
      out += format_double(v);
    }
    for (std::size_t c : m.expert_counts) {
      out += ',';
      out += std::to_string(c);
    }
    out += '\n';
  }
  return out;
}

nlohmann::ordered_json run_summary(const TrainConfig& cfg,
                                   const std::vector<MetricsRecord>& series) {
  const WindowSummary w = final_window(series, cfg.final_window);
  return nlohmann::ordered_json{{"router_kind", std::string(to_string(cfg.router_kind))},
                                {"final_cv_mean", w.cv_mean},
                                {"final_entropy_mean", w.entropy_mean},
                                {"final_task_loss", w.task_loss},
                                {"steps", series.size()},
                                {"seed", cfg.seed}};
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "value,final_task_loss,final_cv_mean,final_entropy_mean\n";
  for (const auto& r : rows) {
    out += r.value + "," + format_double(r.final.task_loss) + "," +
           format_double(r.final.cv_mean) + "," + format_double(r.final.entropy_mean) + "\n";
  }
  return out;
}

std::string dump_json(const nlohmann::ordered_json& doc) { return doc.dump(2) + "\n"; }

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
  }
}

}  // namespace idamoe
