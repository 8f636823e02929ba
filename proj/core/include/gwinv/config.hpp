#pragma once

#include <optional>
#include <string>
#include <vector>

namespace gwinv {

// Ordered INI-style document: [section] headers with key = value lines.
// '#' and ';' start comments; serialization preserves section/key order so
// that parse(serialize(doc)) == doc.
class IniDoc {
 public:
  struct Entry {
    std::string key;
    std::string value;
  };
  struct Section {
    std::string name;
    std::vector<Entry> entries;
  };

  static IniDoc parse(const std::string& text);
  std::string serialize() const;

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> get(const std::string& section,
                                 const std::string& key) const;
  void set(const std::string& section, const std::string& key,
           const std::string& value);

  // Typed getters with defaults; throw ConfigError on unparsable values.
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  long long get_int(const std::string& section, const std::string& key,
                    long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;

  const std::vector<Section>& sections() const { return sections_; }

 private:
  Section& section(const std::string& name);
  std::vector<Section> sections_;
};

}  // namespace gwinv
