#include "stdiff/errors.hpp"

#include <atomic>
#include <cstdio>

namespace stdiff {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::config: return "config error";
    case ErrorKind::ingestion: return "ingestion error";
    case ErrorKind::empty_dataset: return "empty-dataset error";
    case ErrorKind::training_diverged: return "training diverged";
    case ErrorKind::sampling_diverged: return "sampling diverged";
    case ErrorKind::coverage: return "coverage error";
    case ErrorKind::generation: return "generation error";
    case ErrorKind::baseline: return "baseline error";
    case ErrorKind::fit: return "fit error";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

namespace {

void stderr_warning(std::string_view message) {
  std::fprintf(stderr, "warning: %.*s\n", static_cast<int>(message.size()), message.data());
}

std::atomic<WarningHandler> g_warning_handler{&stderr_warning};

}  // namespace

void set_warning_handler(WarningHandler handler) {
  g_warning_handler.store(handler ? handler : &stderr_warning);
}

void warn(std::string_view message) { g_warning_handler.load()(message); }

}  // namespace stdiff
