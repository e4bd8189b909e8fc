#include "codemend/cwe.hpp"

#include "codemend/error.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cstdio>
#include <fstream>

namespace codemend {

namespace {

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) {
    return false;
  }
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

} // namespace

CweId CweId::parse(std::string_view raw) {
  std::string_view s = raw;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  if (starts_with_ci(s, "cwe")) {
    s.remove_prefix(3);
    if (!s.empty() && (s.front() == '-' || s.front() == '_')) {
      s.remove_prefix(1);
    }
  }
  if (s.empty() || s.size() > 3) {
    throw ParseError("invalid CWE id: '" + std::string(raw) + "'");
  }
  unsigned number = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      throw ParseError("invalid CWE id: '" + std::string(raw) + "'");
    }
    number = number * 10 + static_cast<unsigned>(c - '0');
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "CWE-%03u", number);
  return CweId(buf);
}

const CweEntry* Catalog::find(const CweId& id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

Catalog::Resolved Catalog::lookup(const CweId& id, Language lang) const {
  const CweEntry* entry = find(id);
  if (entry == nullptr) {
    throw NotFoundError("unknown CWE id: " + id.str());
  }
  if (!entry->languages.contains(lang)) {
    throw UnsupportedLanguageError(id.str() + " does not support language '" +
                                   to_string(lang) + "'");
  }
  auto hint = entry->hints.find(to_string(lang));
  if (hint == entry->hints.end()) {
    hint = entry->hints.find("any");
  }
  if (hint == entry->hints.end()) {
    throw NotFoundError(id.str() + " has no hint for language '" +
                        to_string(lang) + "'");
  }
  return Resolved{entry, hint->second};
}

std::set<CweId> Catalog::ids() const {
  std::set<CweId> out;
  for (const auto& [id, entry] : entries_) {
    out.insert(id);
  }
  return out;
}

void Catalog::insert(CweEntry entry) {
  auto [it, inserted] = entries_.emplace(entry.id, std::move(entry));
  if (!inserted) {
    throw ParseError("duplicate CWE id in catalog: " + it->first.str());
  }
}

void Catalog::validate() const {
  for (const auto& [id, entry] : entries_) {
    if (entry.languages.empty()) {
      throw ParseError(id.str() + ": entry declares no languages");
    }
    for (Language lang : entry.languages) {
      auto hint = entry.hints.find(to_string(lang));
      if (hint == entry.hints.end()) {
        hint = entry.hints.find("any");
      }
      if (hint == entry.hints.end() || hint->second.empty()) {
        throw ParseError(id.str() + ": missing or empty hint for language '" +
                         to_string(lang) + "'");
      }
    }
  }
}

Catalog Catalog::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("entries") ||
      !doc["entries"].is_array()) {
    throw ParseError("catalog document must be an object with an 'entries' "
                     "array");
  }
  Catalog catalog;
  size_t index = 0;
  for (const auto& item : doc["entries"]) {
    try {
      if (!item.is_object()) {
        throw ParseError("entry is not an object");
      }
      CweEntry entry{CweId::parse(item.at("id").get<std::string>()),
                     item.at("description").get<std::string>(),
                     {},
                     {}};
      for (const auto& lang : item.at("languages")) {
        entry.languages.insert(parse_language(lang.get<std::string>()));
      }
      for (const auto& [key, value] : item.at("hints").items()) {
        const std::string norm =
            key == "any" ? key : to_string(parse_language(key));
        entry.hints[norm] = value.get<std::string>();
      }
      catalog.insert(std::move(entry));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("catalog entry " + std::to_string(index) + ": " +
                       e.what());
    } catch (const ParseError& e) {
      throw ParseError("catalog entry " + std::to_string(index) + ": " +
                       e.what());
    }
    ++index;
  }
  catalog.validate();
  return catalog;
}

Catalog Catalog::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open catalog file: " + path.string());
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("catalog file " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

Catalog Catalog::load(const std::optional<std::filesystem::path>& path) {
  return path ? load_file(*path) : builtin();
}

nlohmann::json Catalog::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, entry] : entries_) {
    nlohmann::json langs = nlohmann::json::array();
    for (Language lang : entry.languages) {
      langs.push_back(to_string(lang));
    }
    nlohmann::json hints = nlohmann::json::object();
    for (const auto& [key, value] : entry.hints) {
      hints[key] = value;
    }
    entries.push_back({{"id", id.str()},
                       {"description", entry.description},
                       {"languages", langs},
                       {"hints", hints}});
  }
  return nlohmann::json{{"entries", entries}};
}

namespace {

constexpr const char* kMemorySafetyHint =
    "Consider adhering to the following rules when allocating and managing "
    "an application's memory:\n"
    "- Double check that the buffer is as large as specified.\n"
    "- When using functions that accept a number of bytes to copy, such as "
    "strncpy(), be aware that if the destination buffer size is equal to "
    "the source buffer size, it may not NULL-terminate the string.\n"
    "- Check buffer boundaries if accessing the buffer in a loop and make "
    "sure there is no danger of writing past the allocated space.\n"
    "- If necessary, truncate all input strings to a reasonable length "
    "before passing them to the copy and concatenation functions.";

} // namespace

Catalog Catalog::builtin() {
  const std::set<Language> both{Language::python, Language::c_cpp};
  const std::set<Language> py{Language::python};
  const std::set<Language> cc{Language::c_cpp};

  Catalog catalog;
  catalog.insert(
      {CweId::parse("CWE-020"),
       "Improper Input Validation",
       py,
       {{"any", "Data from all potentially untrusted sources should be "
                "subject to input validation."}}});
  catalog.insert(
      {CweId::parse("CWE-022"),
       "Improper Limitation of a Pathname to a Restricted Directory "
       "(\"Path Traversal\")",
       both,
       {{"python",
         "Inputs should be decoded and canonicalized to the application's "
         "current internal representation before being validated. Sanitize "
         "the user's input using safe_join or os.path.normpath."},
        {"c_cpp",
         "Inputs should be decoded and canonicalized to the application's "
         "current internal representation before being validated. Use a "
         "built-in path canonicalization function (such as realpath() in C) "
         "that produces the canonical version of the pathname, which "
         "effectively removes sequences and symbolic links (CWE-23, "
         "CWE-59)."}}});
  catalog.insert(
      {CweId::parse("CWE-078"),
       "Improper Neutralization of Special Elements used in an OS Command "
       "(\"OS Command Injection\")",
       py,
       {{"any", "Properly quote arguments and escape any special characters "
                "within those arguments. If using subprocess, avoid using "
                "shell=True. Alternatively, use shell=False instead."}}});
  catalog.insert(
      {CweId::parse("CWE-079"),
       "Improper Neutralization of Input During Web Page Generation "
       "(\"Cross-site Scripting\")",
       py,
       {{"any", "Note that proper output encoding, escaping, and quoting is "
                "the most effective solution for preventing XSS."}}});
  catalog.insert(
      {CweId::parse("CWE-094"),
       "Improper Control of Generation of Code (\"Code Injection\")",
       py,
       {{"any", "Avoid using eval, exec, execfile functions or validate the "
                "user input. Use the ast.literal_eval() function. However, "
                "consider that an adversary could still cause excessive "
                "memory or stack consumption via deeply nested "
                "structures."}}});
  catalog.insert(
      {CweId::parse("CWE-117"),
       "Improper Output Neutralization for Logs",
       py,
       {{"any",
         "User input should be suitably sanitized before it is logged. If "
         "the log entries are plain text, then line breaks should be removed "
         "from user input, such as replacing (old, new) or similar. Care "
         "should also be taken that user input is clearly marked in log "
         "entries, and that a malicious user cannot cause confusion in other "
         "ways.For log entries that will be displayed in HTML, user input "
         "should be HTML encoded before being logged, to prevent forgery and "
         "other forms of HTML injection."}}});
  catalog.insert(
      {CweId::parse("CWE-119"),
       "Improper Restriction of Operations within the Bounds of a Memory "
       "Buffer",
       cc,
       {{"any", kMemorySafetyHint}}});
  catalog.insert(
      {CweId::parse("CWE-190"),
       "Integer Overflow or Wraparound",
       cc,
       {{"any",
         "Perform input validation on any numeric input by ensuring that it "
         "is within the expected range. Enforce that the input meets both "
         "the minimum and maximum requirements for the expected range. Use "
         "unsigned integers where possible. This makes it easier to perform "
         "validation for integer overflows. When signed integers are "
         "required, ensure that the range check includes minimum values as "
         "well as maximum values."}}});
  catalog.insert(
      {CweId::parse("CWE-476"),
       "NULL Pointer Dereference",
       cc,
       {{"any", "If all pointers that could have been modified are "
                "sanity-checked previous to use, nearly all NULL pointer "
                "dereferences can be prevented."}}});
  catalog.insert(
      {CweId::parse("CWE-502"),
       "Deserialization of Untrusted Data",
       py,
       {{"any", "When deserializing data, ensure that a new object is "
                "populated rather than just deserialized into an existing "
                "one. This ensures that the data flows through safe input "
                "validation processes and that the functions remain "
                "secure."}}});
  catalog.insert(
      {CweId::parse("CWE-611"),
       "Improper Restriction of XML External Entity Reference",
       py,
       {{"any",
         "Many XML parsers and validators can be configured to disable "
         "external entity expansion. It is recommended to use the defusedxml "
         "library instead of the native Python XML libraries. The defusedxml "
         "library is specifically designed to mitigate XML external entity "
         "attacks. To guard against XXE attacks with the lxml library, you "
         "should create a parser with resolve_entities set to false."}}});
  catalog.insert({CweId::parse("CWE-787"),
                  "Out-of-bounds Write",
                  cc,
                  {{"any", kMemorySafetyHint}}});
  catalog.validate();
  return catalog;
}

} // namespace codemend
