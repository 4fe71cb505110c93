#pragma once

#include <stdexcept>
#include <string>

namespace droopguard {

// Malformed input text (feeder files, config files, CSV). Carries the
// 1-based line number when one is known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}

  int line() const { return line_; }

 private:
  int line_ = 0;
};

// Structurally invalid feeder (cycles, disconnected buses, dangling refs).
class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values. `field` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(field) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Power flow failed to converge, a loss went non-finite, and similar.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace droopguard
