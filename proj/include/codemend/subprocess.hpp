#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace codemend {

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string out;
  std::string err;
};

struct ProcessOptions {
  std::chrono::milliseconds timeout{std::chrono::milliseconds::max()};
  std::optional<std::filesystem::path> cwd;
  // CPU-seconds cap applied in the child; 0 disables it.
  unsigned cpu_limit_s = 0;
};

// Runs argv[0] with the given arguments, capturing stdout/stderr.
// On timeout the child is killed and `timed_out` is set; exit_code is the
// child's exit status, or 128+signal when it died from a signal.
ProcessResult run_process(const std::vector<std::string>& argv,
                          const ProcessOptions& options = {});

} // namespace codemend
