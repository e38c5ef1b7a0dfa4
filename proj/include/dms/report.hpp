#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "dms/experiment.hpp"

namespace dms {

enum class ReportFormat { Json, Csv, Markdown };

std::optional<ReportFormat> parse_report_format(std::string_view name);

/// Deterministic serialization: identical reports give identical bytes.
/// Wall time is only included when asked for.
nlohmann::ordered_json report_to_json(const EvalReport& report, bool include_timing = false);
std::string report_to_csv(const EvalReport& report);
/// Attacks as rows, storage methods as columns; the best ASR in each row
/// is bold (every tied cell).
std::string report_to_markdown(const EvalReport& report);

std::string render_report(const EvalReport& report, ReportFormat format);
void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path);

/// One row per (value, attack, method).
std::string sweep_to_csv(SweepAxis axis, std::span<const double> values,
                         std::span<const EvalReport> reports);

}  // namespace dms
