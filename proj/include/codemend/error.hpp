#pragma once

#include <stdexcept>
#include <string>

namespace codemend {

// Base for all library errors. Subclasses distinguish failure classes so
// callers can react (retry, reject, abort) without string matching.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input document (catalog file, report, corpus record, ...).
class ParseError : public Error {
public:
  using Error::Error;
};

// Invalid configuration or parameter values.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Lookup of an id that is not present.
class NotFoundError : public Error {
public:
  using Error::Error;
};

// Entry exists but does not support the requested language.
class UnsupportedLanguageError : public Error {
public:
  using Error::Error;
};

// External tool invocation failed (nonzero exit without usable output).
class ToolError : public Error {
public:
  using Error::Error;
};

// External tool exceeded its configured time limit.
class TimeoutError : public Error {
public:
  using Error::Error;
};

// Transport-level failure after exhausting retries.
class TransportError : public Error {
public:
  using Error::Error;
};

// Model output carried no extractable code block.
class ExtractionError : public Error {
public:
  using Error::Error;
};

// Extracted code block was empty.
class EmptyFixError : public Error {
public:
  using Error::Error;
};

// Requested value is not available (e.g. logprobs absent).
class UnavailableError : public Error {
public:
  using Error::Error;
};

// Scripted backend ran out of replay responses.
class ScriptExhaustedError : public Error {
public:
  using Error::Error;
};

} // namespace codemend
