#include "dms/report.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "dms/image_io.hpp"

namespace dms {
namespace {

// Fixed-precision text so CSV and markdown do not depend on stream state.
std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string percent(double v) { return fixed(100.0 * v, 2) + "%"; }

}  // namespace

std::optional<ReportFormat> parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::Json;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  return std::nullopt;
}

nlohmann::ordered_json report_to_json(const EvalReport& report, bool include_timing) {
  nlohmann::ordered_json j;
  j["evaluated"] = report.evaluated;
  j["skipped_misclassified"] = report.skipped_misclassified;
  j["train_accuracy"] = report.train_accuracy;
  j["test_accuracy"] = report.test_accuracy;
  auto attacks = nlohmann::ordered_json::array();
  for (const auto& a : report.attacks) {
    nlohmann::ordered_json aj;
    aj["attack"] = to_string(a.attack.method);
    aj["epsilon"] = a.attack.epsilon;
    aj["steps"] = a.attack.steps;
    aj["alpha"] = a.attack.step_size();
    auto methods = nlohmann::ordered_json::array();
    for (const auto& m : a.methods) {
      nlohmann::ordered_json mj;
      mj["method"] = to_string(m.method);
      mj["asr"] = m.asr;
      mj["successes"] = m.successes;
      mj["total"] = m.total;
      mj["precision_loss"] = m.precision_loss;
      mj["epsilon_violations"] = m.epsilon_violations;
      mj["max_linf"] = m.max_linf;
      if (m.method == StoreMethod::Dms) mj["attribution_applied"] = m.attribution_applied;
      methods.push_back(mj);
    }
    aj["methods"] = methods;
    attacks.push_back(aj);
  }
  j["attacks"] = attacks;
  j["config"] = report.config;
  if (include_timing) j["wall_seconds"] = report.wall_seconds;
  return j;
}

std::string report_to_csv(const EvalReport& report) {
  std::string out =
      "attack,method,asr,successes,total,precision_loss,epsilon_violations,max_linf\n";
  for (const auto& a : report.attacks) {
    for (const auto& m : a.methods) {
      out += to_string(a.attack.method) + "," + to_string(m.method) + "," + fixed(m.asr, 6) +
             "," + std::to_string(m.successes) + "," + std::to_string(m.total) + "," +
             fixed(m.precision_loss, 6) + "," + std::to_string(m.epsilon_violations) + "," +
             fixed(m.max_linf, 6) + "\n";
    }
  }
  return out;
}

std::string report_to_markdown(const EvalReport& report) {
  if (report.attacks.empty()) return "";
  const auto& columns = report.attacks.front().methods;
  std::string out = "| Attack |";
  std::string rule = "|---|";
  for (const auto& m : columns) {
    out += " " + to_string(m.method) + " |";
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (const auto& a : report.attacks) {
    double best = 0.0;
    for (const auto& m : a.methods) best = std::max(best, m.asr);
    out += "| " + to_string(a.attack.method) + " |";
    for (const auto& m : a.methods) {
      const std::string cell = percent(m.asr);
      out += m.asr == best ? " **" + cell + "** |" : " " + cell + " |";
    }
    out += "\n";
  }
  return out;
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json: return report_to_json(report).dump(2) + "\n";
    case ReportFormat::Csv: return report_to_csv(report);
    case ReportFormat::Markdown: return report_to_markdown(report);
  }
  return {};
}

void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, render_report(report, format));
}

std::string sweep_to_csv(SweepAxis axis, std::span<const double> values,
                         std::span<const EvalReport> reports) {
  if (values.size() != reports.size()) {
    throw std::invalid_argument("sweep_to_csv: one report per value expected");
  }
  std::string out = "axis,value,attack,method,asr,precision_loss,epsilon_violations\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (const auto& a : reports[i].attacks) {
      for (const auto& m : a.methods) {
        out += to_string(axis) + "," + fixed(values[i], 6) + "," + to_string(a.attack.method) +
               "," + to_string(m.method) + "," + fixed(m.asr, 6) + "," +
               fixed(m.precision_loss, 6) + "," + std::to_string(m.epsilon_violations) + "\n";
      }
    }
  }
  return out;
}

}  // namespace dms
