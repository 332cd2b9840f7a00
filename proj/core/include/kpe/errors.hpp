#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kpe {

/// Invalid argument supplied by the caller (bad dimensions, out-of-range parameters).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear solve or spectral computation could not be completed.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double attempted_jitter)
      : std::runtime_error(what), jitter_(attempted_jitter) {}
  double attempted_jitter() const noexcept { return jitter_; }

 private:
  double jitter_;
};

/// The problem instance violates a modelling assumption (e.g. zero noise variance).
class InstanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A quantity is not defined for this instance (e.g. an importance ratio against an atomic target).
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Observed data is inconsistent with the requested estimator.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Spectral truncation left too few components.
class DegeneracyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File I/O or schema problems; carries a line/field locator when known.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration validation failure. Collects every offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> fields)
      : std::runtime_error(join(fields)), fields_(std::move(fields)) {}
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  static std::string join(const std::vector<std::string>& fields) {
    std::string out = "invalid configuration:";
    for (const auto& f : fields) {
      out += "\n  ";
      out += f;
    }
    return out;
  }
  std::vector<std::string> fields_;
};

}  // namespace kpe
