#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stdiff {

enum class ErrorKind {
  parameter,
  shape,
  contract,
  config,
  ingestion,
  empty_dataset,
  training_diverged,
  sampling_diverged,
  coverage,
  generation,
  baseline,
  fit,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a category so callers (the CLI
/// in particular) can map it to a message prefix and exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Non-fatal diagnostics (constant channels, dropped columns). Defaults to
/// stderr; tests and the Python module may redirect it.
using WarningHandler = void (*)(std::string_view);
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace stdiff
