#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gwinv {

// Machine-readable summary of one run. Serialized as JSON with a
// schema_version field; every numeric field round-trips at full precision.
struct RunReport {
  int schema_version = 1;
  std::string method;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  int iterations = 0;
  double final_mis = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> mis_trace;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> artifacts;  // name -> emitted file path
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& json_text);
void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

// Structural schema check: required fields present with the right JSON types
// and a known schema_version. Returns an empty string when valid, else the
// first problem found.
std::string validate_report_json(const std::string& json_text);

// Plain-text summary table over several reports (the `report` subcommand).
std::string render_report_table(const std::vector<RunReport>& reports);

}  // namespace gwinv
