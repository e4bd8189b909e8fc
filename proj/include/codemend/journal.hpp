#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>

namespace codemend {

// Append-only work log: one JSON line per completed unit, flushed
// immediately so a crashed run can resume without repeating work.
class RunJournal {
public:
  explicit RunJournal(std::filesystem::path path);

  void append(const std::string& id, const nlohmann::json& payload);

  // Reads a journal back as id -> payload (last write wins).
  static std::map<std::string, nlohmann::json>
  replay(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

// Whole-file JSONL helpers.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path,
                 const std::vector<nlohmann::json>& lines);
void write_json_file(const std::filesystem::path& path,
                     const nlohmann::json& doc);

} // namespace codemend
