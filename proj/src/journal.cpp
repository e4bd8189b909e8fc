#include "codemend/journal.hpp"

#include "codemend/error.hpp"

namespace codemend {

RunJournal::RunJournal(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::app | std::ios::binary);
  if (!out_) {
    throw ConfigError("cannot open journal for append: " + path_.string());
  }
}

void RunJournal::append(const std::string& id, const nlohmann::json& payload) {
  std::lock_guard lock(mutex_);
  out_ << nlohmann::json{{"id", id}, {"payload", payload}}.dump() << "\n";
  out_.flush();
}

std::map<std::string, nlohmann::json>
RunJournal::replay(const std::filesystem::path& path) {
  std::map<std::string, nlohmann::json> entries;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return entries; // no journal yet
  }
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      auto doc = nlohmann::json::parse(line);
      entries[doc.at("id").get<std::string>()] = doc.at("payload");
    } catch (const nlohmann::json::exception&) {
      // A torn final line from a crash is expected; anything already
      // complete was flushed before it.
      break;
    }
  }
  return entries;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open file: " + path.string());
  }
  std::vector<nlohmann::json> lines;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      lines.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return lines;
}

void write_jsonl(const std::filesystem::path& path,
                 const std::vector<nlohmann::json>& lines) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ConfigError("cannot write file: " + path.string());
  }
  for (const auto& line : lines) {
    out << line.dump() << "\n";
  }
}

void write_json_file(const std::filesystem::path& path,
                     const nlohmann::json& doc) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ConfigError("cannot write file: " + path.string());
  }
  out << doc.dump(2) << "\n";
}

} // namespace codemend
