#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace hmslab {

// SplitMix64 finalizer; used to derive independent RNG streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fingerprint(std::string_view text);

// Line-oriented key=value config. '#' starts a comment; blank lines ignored.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source);
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  std::vector<double> fallback) const;
  // Rejects keys outside `known` (kData).
  void require_known(const std::vector<std::string>& known) const;
  // Canonical rendering, sorted by key; input to fingerprint().
  std::string canonical() const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
};

std::string read_file(const std::filesystem::path& path);
// Writes atomically enough for our purposes; failures name the path (kData).
void write_file(const std::filesystem::path& path, std::string_view contents);

// Shortest round-trippable decimal rendering of a double.
std::string format_double(double v);

}  // namespace hmslab
