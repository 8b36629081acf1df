#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace stdiff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Resolved key-value settings: built-in defaults, then the config file, then
/// flag overrides.
class RunConfig {
 public:
  RunConfig();

  /// Reads `key = value` lines; `#` starts a comment. Unknown keys are a
  /// config error.
  void merge_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  const std::string& text(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "STDIFF_CONFIG";

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace stdiff::cli
