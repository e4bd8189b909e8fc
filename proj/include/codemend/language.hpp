#pragma once

#include <string>
#include <string_view>

namespace codemend {

enum class Language { python, c_cpp };

// Canonical tag used in files and configs: "python" / "c_cpp".
std::string to_string(Language lang);

// Human-facing name used inside prompts: "Python" / "C/C++".
std::string display_name(Language lang);

// Accepts common aliases: py/python/python3, c/cpp/c++/c_cpp/c/c++.
Language parse_language(std::string_view tag);

// True if a fenced-code-block info string denotes `lang` (case-insensitive).
bool fence_tag_matches(Language lang, std::string_view info);

// File extension used when materializing a sample on disk.
std::string source_extension(Language lang);

} // namespace codemend
