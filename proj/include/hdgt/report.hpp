#pragma once

#include <string>

#include <json.hpp>

#include "hdgt/config.hpp"

namespace hdgt {

inline constexpr const char* kToolVersion = "hdgt 1.0";
inline constexpr const char* kReportSchema = "hdgt-report-v1";

// A fresh report carrying the schema version, tool version, the command that
// produced it, and the materialized config echo. Commands add their metric
// sections; wall-clock numbers go only under the top-level "timing" object,
// so a report with "timing" removed is a pure function of (config, seed).
nlohmann::json report_skeleton(const std::string& command, const RunConfig& cfg);

// Human-readable rendering: header lines, then one "[section]" per top-level
// object (alphabetical, "timing" forced last) with dotted flattened keys and
// aligned values. An object of the form {"columns": [...], "rows": [[...]]}
// renders as an aligned table.
std::string render_report_text(const nlohmann::json& report);

// Writes <dir>/report.json (2-space indent) and <dir>/report.txt.
void write_report(const std::string& dir, const nlohmann::json& report);

}  // namespace hdgt
