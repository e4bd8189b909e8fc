#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace codemend {

// Exit-code contract shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1; // per-unit errors, run completed
inline constexpr int kExitSetup = 2;   // configuration or input failure

// Merged run configuration. Precedence: command-line flags override file
// values, which override built-in defaults. Secrets stay in environment
// variables named by the backend config.
struct RunConfig {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path output_dir = "out";
  uint64_t seed = 0;
  int jobs = 0; // 0: logical cores

  static RunConfig from_file(const std::filesystem::path& path);

  // Section accessor: doc[section][key], with a default.
  template <typename T>
  T get(const std::string& section, const std::string& key, T fallback) const {
    if (doc.contains(section) && doc[section].contains(key)) {
      return doc[section][key].get<T>();
    }
    return fallback;
  }
  bool has(const std::string& section, const std::string& key) const {
    return doc.contains(section) && doc[section].contains(key);
  }
};

int cmd_synthesize(const RunConfig& config,
                   const std::filesystem::path& corpus_path);
int cmd_dataset(const RunConfig& config, const std::filesystem::path& pairs_path,
                const std::optional<std::filesystem::path>& benchmark_path);
int cmd_generate(const RunConfig& config,
                 const std::optional<std::filesystem::path>& prompt_file,
                 const std::optional<std::string>& inline_prompt,
                 const std::string& inline_language);
int cmd_eval_security(const RunConfig& config,
                      const std::filesystem::path& prompts_path);
int cmd_eval_functional(const RunConfig& config,
                        const std::filesystem::path& tasks_path);
int cmd_report(const std::filesystem::path& report_path);

} // namespace codemend
