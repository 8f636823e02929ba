#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gwinv {

// Malformed configuration files or inconsistent option combinations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, corrupt, or missing artifact files (bases, checkpoints, CSVs).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failures (solver non-convergence, non-finite losses).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Formats a double with 17 significant digits so that text round-trips are
// bit-exact.
std::string fmt17(double v);

// Strict double/integer parsing; throws IoError on trailing garbage.
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

// FNV-1a 64-bit hash of a byte string, rendered as fixed-width hex. Used to
// tie checkpoints to the exact basis/problem files they were built from.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Raises the glibc malloc mmap/trim thresholds so the large short-lived
// buffers of the training loops are recycled in the arena instead of being
// returned to the kernel on every free. Cuts wall time of long runs by tens
// of percent on glibc; no-op elsewhere. Call once at program start.
void tune_allocator();

}  // namespace gwinv
