#include "hdgt/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "hdgt/errors.hpp"

namespace hdgt {
namespace {

using nlohmann::json;

std::string scalar_str(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

bool is_table(const json& v) {
  return v.is_object() && v.size() == 2 && v.contains("columns") && v.contains("rows") &&
         v["columns"].is_array() && v["rows"].is_array();
}

void flatten(const json& v, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  if (v.is_object()) {
    for (auto it = v.begin(); it != v.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (v.is_array()) {
    const bool all_scalar =
        std::all_of(v.begin(), v.end(), [](const json& e) { return !e.is_structured(); });
    if (all_scalar) {
      std::string line = "[";
      for (std::size_t i = 0; i < v.size(); ++i) line += (i ? ", " : "") + scalar_str(v[i]);
      out.emplace_back(prefix, line + "]");
    } else {
      for (std::size_t i = 0; i < v.size(); ++i)
        flatten(v[i], prefix + "[" + std::to_string(i) + "]", out);
    }
  } else {
    out.emplace_back(prefix, scalar_str(v));
  }
}

void render_table(const json& table, std::ostringstream& os) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header;
  for (const json& c : table["columns"]) header.push_back(scalar_str(c));
  cells.push_back(header);
  for (const json& row : table["rows"]) {
    std::vector<std::string> line;
    for (const json& v : row) line.push_back(scalar_str(v));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i)
      width[i] = std::max(width[i], row[i].size());
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      std::string cell = cells[r][i];
      cell.resize(width[i], ' ');
      line += cell;
      if (i + 1 < cells[r].size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << "  " << line << "\n";
    if (r == 0) {
      std::string rule;
      for (std::size_t i = 0; i < width.size(); ++i) {
        rule += std::string(width[i], '-');
        if (i + 1 < width.size()) rule += "  ";
      }
      os << "  " << rule << "\n";
    }
  }
}

void render_section(const std::string& name, const json& body, std::ostringstream& os) {
  os << "[" << name << "]\n";
  if (is_table(body)) {
    render_table(body, os);
    os << "\n";
    return;
  }
  std::vector<std::pair<std::string, std::string>> lines;
  flatten(body, "", lines);
  std::size_t key_width = 0;
  for (const auto& [k, v] : lines) key_width = std::max(key_width, k.size());
  for (const auto& [k, v] : lines) {
    std::string key = k;
    key.resize(key_width, ' ');
    os << "  " << key << " = " << v << "\n";
  }
  os << "\n";
}

}  // namespace

json report_skeleton(const std::string& command, const RunConfig& cfg) {
  json report;
  report["schema"] = kReportSchema;
  report["tool"] = kToolVersion;
  report["command"] = command;
  report["config"] = json::parse(run_config_json(cfg));
  return report;
}

std::string render_report_text(const json& report) {
  std::ostringstream os;
  os << "report " << scalar_str(report.value("schema", json("?")))
     << " | " << scalar_str(report.value("tool", json("?")))
     << " | command: " << scalar_str(report.value("command", json("?"))) << "\n\n";
  std::vector<std::string> sections;
  for (auto it = report.begin(); it != report.end(); ++it) {
    const std::string& key = it.key();
    if (key == "schema" || key == "tool" || key == "command" || key == "timing") continue;
    sections.push_back(key);
  }
  std::sort(sections.begin(), sections.end());
  for (const std::string& name : sections) render_section(name, report.at(name), os);
  if (report.contains("timing")) render_section("timing", report.at("timing"), os);
  return os.str();
}

void write_report(const std::string& dir, const json& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir + "/report.json", std::ios::binary);
    if (!os) throw MissingArtifactError("cannot write " + dir + "/report.json");
    os << report.dump(2) << "\n";
  }
  {
    std::ofstream os(dir + "/report.txt", std::ios::binary);
    if (!os) throw MissingArtifactError("cannot write " + dir + "/report.txt");
    os << render_report_text(report);
  }
}

}  // namespace hdgt
