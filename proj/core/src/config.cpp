#include "gwinv/config.hpp"

#include <sstream>

#include "gwinv/common.hpp"

namespace gwinv {

IniDoc IniDoc::parse(const std::string& text) {
  IniDoc doc;
  std::string current;
  int lineno = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated section header");
      current = trim(line.substr(1, line.size() - 2));
      if (current.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      doc.section(current);
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    doc.set(current, key, value);
  }
  return doc;
}

std::string IniDoc::serialize() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& sec : sections_) {
    if (!first) out << "\n";
    first = false;
    out << "[" << sec.name << "]\n";
    for (const auto& e : sec.entries) out << e.key << " = " << e.value << "\n";
  }
  return out.str();
}

IniDoc::Section& IniDoc::section(const std::string& name) {
  for (auto& s : sections_)
    if (s.name == name) return s;
  sections_.push_back(Section{name, {}});
  return sections_.back();
}

bool IniDoc::has(const std::string& section, const std::string& key) const {
  return get(section, key).has_value();
}

std::optional<std::string> IniDoc::get(const std::string& section,
                                       const std::string& key) const {
  for (const auto& s : sections_) {
    if (s.name != section) continue;
    for (const auto& e : s.entries)
      if (e.key == key) return e.value;
  }
  return std::nullopt;
}

void IniDoc::set(const std::string& section_name, const std::string& key,
                 const std::string& value) {
  Section& s = section(section_name);
  for (auto& e : s.entries) {
    if (e.key == key) {
      e.value = value;
      return;
    }
  }
  s.entries.push_back(Entry{key, value});
}

double IniDoc::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  try {
    return parse_double(*v);
  } catch (const IoError& e) {
    throw ConfigError("[" + section + "] " + key + ": " + e.what());
  }
}

long long IniDoc::get_int(const std::string& section, const std::string& key,
                          long long fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  try {
    return parse_int(*v);
  } catch (const IoError& e) {
    throw ConfigError("[" + section + "] " + key + ": " + e.what());
  }
}

bool IniDoc::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  std::string t = trim(*v);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  throw ConfigError("[" + section + "] " + key + ": bad boolean '" + t + "'");
}

std::string IniDoc::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  auto v = get(section, key);
  return v ? *v : fallback;
}

}  // namespace gwinv
