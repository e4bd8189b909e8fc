#include "codemend/language.hpp"

#include "codemend/error.hpp"

#include <algorithm>
#include <cctype>

namespace codemend {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

} // namespace

std::string to_string(Language lang) {
  return lang == Language::python ? "python" : "c_cpp";
}

std::string display_name(Language lang) {
  return lang == Language::python ? "Python" : "C/C++";
}

Language parse_language(std::string_view tag) {
  const std::string t = lower(tag);
  if (t == "python" || t == "py" || t == "python3") {
    return Language::python;
  }
  if (t == "c_cpp" || t == "c" || t == "cpp" || t == "c++" || t == "c/c++" ||
      t == "cxx" || t == "cc") {
    return Language::c_cpp;
  }
  throw ParseError("unknown language tag: '" + std::string(tag) + "'");
}

bool fence_tag_matches(Language lang, std::string_view info) {
  const std::string t = lower(info);
  if (lang == Language::python) {
    return t == "python" || t == "py" || t == "python3";
  }
  return t == "c" || t == "cpp" || t == "c++" || t == "c/c++" || t == "cxx" ||
         t == "cc" || t == "c_cpp";
}

std::string source_extension(Language lang) {
  return lang == Language::python ? ".py" : ".cpp";
}

} // namespace codemend
