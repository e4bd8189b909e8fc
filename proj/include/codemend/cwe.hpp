#pragma once

#include "codemend/language.hpp"

#include <nlohmann/json_fwd.hpp>

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace codemend {

// Normalized weakness identifier, always of the form "CWE-NNN" with a
// zero-padded three-digit number ("CWE-79" and "cwe-079" both normalize
// to "CWE-079").
class CweId {
public:
  static CweId parse(std::string_view raw);

  // Sentinel for analyzer results that carry no weakness tag.
  static CweId untagged() { return CweId("CWE-000"); }

  const std::string& str() const { return value_; }
  auto operator<=>(const CweId&) const = default;

private:
  explicit CweId(std::string value) : value_(std::move(value)) {}
  std::string value_;
};

struct CweEntry {
  CweId id;
  std::string description;
  std::set<Language> languages;
  // Keys are language tags ("python", "c_cpp") or "any" for a hint shared
  // across languages. Every language in `languages` must resolve.
  std::map<std::string, std::string> hints;

  bool operator==(const CweEntry&) const = default;
};

// The supported weakness set with per-language mitigation hints.
// Immutable after load; safe to share across workers.
class Catalog {
public:
  // The shipped default set: the eleven evaluated weaknesses plus
  // CWE-119, which occurs in synthesized C/C++ data and reuses the
  // memory-safety hint of CWE-787.
  static Catalog builtin();

  static Catalog load_file(const std::filesystem::path& path);
  static Catalog from_json(const nlohmann::json& doc);

  // Loads `path` when given, the built-in set otherwise.
  static Catalog load(const std::optional<std::filesystem::path>& path);

  nlohmann::json to_json() const;

  struct Resolved {
    const CweEntry* entry;
    std::string hint;
  };
  // Resolves the entry and its hint for `lang`. A shared hint is returned
  // for any supported language. Throws NotFoundError for absent ids and
  // UnsupportedLanguageError when `lang` is outside entry.languages.
  Resolved lookup(const CweId& id, Language lang) const;

  const CweEntry* find(const CweId& id) const;
  const std::map<CweId, CweEntry>& entries() const { return entries_; }
  std::set<CweId> ids() const;

  bool operator==(const Catalog&) const = default;

private:
  void insert(CweEntry entry);
  void validate() const;

  std::map<CweId, CweEntry> entries_;
};

} // namespace codemend
