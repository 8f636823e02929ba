#include "gwinv/report.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gwinv/common.hpp"

namespace gwinv {

using nlohmann::json;

std::string report_to_json(const RunReport& report) {
  json doc;
  doc["schema_version"] = report.schema_version;
  doc["method"] = report.method;
  doc["seed"] = report.seed;
  doc["rmse"] = report.rmse;
  doc["iterations"] = report.iterations;
  doc["final_mis"] = report.final_mis;
  doc["wall_seconds"] = report.wall_seconds;
  doc["mis_trace"] = report.mis_trace;
  doc["metrics"] = report.metrics;
  doc["artifacts"] = report.artifacts;
  return doc.dump(2) + "\n";
}

RunReport report_from_json(const std::string& json_text) {
  const std::string problem = validate_report_json(json_text);
  if (!problem.empty()) throw IoError("run report: " + problem);
  const json doc = json::parse(json_text);
  RunReport report;
  report.schema_version = doc.at("schema_version").get<int>();
  report.method = doc.at("method").get<std::string>();
  report.seed = doc.at("seed").get<std::uint64_t>();
  report.rmse = doc.at("rmse").get<double>();
  report.iterations = doc.at("iterations").get<int>();
  report.final_mis = doc.at("final_mis").get<double>();
  report.wall_seconds = doc.at("wall_seconds").get<double>();
  report.mis_trace = doc.at("mis_trace").get<std::vector<double>>();
  report.metrics = doc.at("metrics").get<std::map<std::string, double>>();
  report.artifacts =
      doc.at("artifacts").get<std::map<std::string, std::string>>();
  return report;
}

void save_report(const RunReport& report, const std::string& path) {
  write_text_file(path, report_to_json(report));
}

RunReport load_report(const std::string& path) {
  return report_from_json(read_text_file(path));
}

std::string validate_report_json(const std::string& json_text) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) return "not valid JSON";
  if (!doc.is_object()) return "top level is not an object";

  const auto need = [&](const char* key, bool ok,
                        const char* type) -> std::string {
    if (!doc.contains(key))
      return std::string("missing field '") + key + "'";
    if (!ok) return std::string("field '") + key + "' is not " + type;
    return "";
  };

  std::string p;
  p = need("schema_version",
           doc.contains("schema_version") &&
               doc["schema_version"].is_number_integer(),
           "an integer");
  if (!p.empty()) return p;
  if (doc["schema_version"].get<int>() != 1)
    return "unknown schema_version " + doc["schema_version"].dump();
  p = need("method", doc.contains("method") && doc["method"].is_string(),
           "a string");
  if (!p.empty()) return p;
  p = need("seed",
           doc.contains("seed") && doc["seed"].is_number_unsigned(),
           "an unsigned integer");
  if (!p.empty()) return p;
  for (const char* key : {"rmse", "final_mis", "wall_seconds"}) {
    p = need(key, doc.contains(key) && doc[key].is_number(), "a number");
    if (!p.empty()) return p;
  }
  p = need("iterations",
           doc.contains("iterations") && doc["iterations"].is_number_integer(),
           "an integer");
  if (!p.empty()) return p;
  p = need("mis_trace",
           doc.contains("mis_trace") && doc["mis_trace"].is_array(),
           "an array");
  if (!p.empty()) return p;
  for (const json& v : doc["mis_trace"])
    if (!v.is_number()) return "mis_trace holds a non-number";
  p = need("metrics", doc.contains("metrics") && doc["metrics"].is_object(),
           "an object");
  if (!p.empty()) return p;
  for (const auto& [key, value] : doc["metrics"].items())
    if (!value.is_number())
      return "metrics['" + key + "'] is not a number";
  p = need("artifacts",
           doc.contains("artifacts") && doc["artifacts"].is_object(),
           "an object");
  if (!p.empty()) return p;
  for (const auto& [key, value] : doc["artifacts"].items())
    if (!value.is_string())
      return "artifacts['" + key + "'] is not a string";
  return "";
}

std::string render_report_table(const std::vector<RunReport>& reports) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "method" << std::right << std::setw(12)
      << "seed" << std::setw(12) << "rmse" << std::setw(8) << "iters"
      << std::setw(14) << "final_mis" << std::setw(10) << "wall_s" << "\n";
  out << std::string(74, '-') << "\n";
  for (const RunReport& r : reports) {
    out << std::left << std::setw(18) << r.method << std::right
        << std::setw(12) << r.seed << std::setw(12) << std::setprecision(4)
        << std::fixed << r.rmse << std::setw(8) << r.iterations
        << std::setw(14) << std::setprecision(4) << std::scientific
        << r.final_mis << std::setw(10) << std::setprecision(2) << std::fixed
        << r.wall_seconds << "\n";
    out.unsetf(std::ios::floatfield);
  }
  return out.str();
}

}  // namespace gwinv
